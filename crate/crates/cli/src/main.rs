//! Command-line front end: simulation runs, verification suites, SVG plots,
//! and parameter sweeps.
//!
//! Exit codes: 0 success, 1 configuration error, 2 divergence (summary still
//! written), 3 verification failure.

use plate_swarm_cli::{csvio, scenario, summary, svg, verify_suites};

use clap::{Parser, Subcommand};
use plate_swarm_core::sim::{simulate, Mode, SimOutcome};
use plate_swarm_core::verify::boundary_layer_rate;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "plate-swarm",
    about = "Simulator and controller for a plate suspended by three cable-tethered quadrotors with a free ball on top"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory.csv, controls.csv, summary.json.
    Simulate {
        /// Scenario file (path or bundled name: paper_sec4, hover, passive).
        #[arg(long)]
        scenario: String,
        /// Output directory (default ./out, or $PLATE_SWARM_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the integrator step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the run duration.
        #[arg(long)]
        duration: Option<f64>,
        /// Override the mode: closed-loop | passive | attitude-only.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run the named verification suite and write verify.json.
    Verify {
        /// algebra | conservation | pfl | lyapunov | gains | all
        #[arg(long)]
        suite: String,
        /// Scenario for trajectory-based suites (default paper_sec4).
        #[arg(long, default_value = "paper_sec4.json")]
        scenario: String,
        /// Seed for randomized sweeps.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG figures from a trajectory CSV.
    Plot {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// attitude | omega | plate-pos | plate-vel | ball-pos | ball-vel | all
        #[arg(long, default_value = "all")]
        figs: String,
    },
    /// Run one scenario across several values of one parameter.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// Parameter to sweep: eps or any gain name (k1..k8, k_R, k_Omega).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("PLATE_SWARM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::ClosedLoop => "closed-loop",
        Mode::Passive => "passive",
        Mode::AttitudeOnly => "attitude-only",
    }
}

fn cmd_simulate(
    scenario_path: &str,
    out: Option<PathBuf>,
    dt: Option<f64>,
    duration: Option<f64>,
    mode: Option<String>,
) -> Result<u8, String> {
    let (_, mut sc) = scenario::load(scenario_path).map_err(|e| e.to_string())?;
    if let Some(dt) = dt {
        sc.config.dt = dt;
    }
    if let Some(duration) = duration {
        sc.config.duration = duration;
    }
    if let Some(mode) = mode {
        sc.mode = match mode.as_str() {
            "closed-loop" => Mode::ClosedLoop,
            "passive" => Mode::Passive,
            "attitude-only" => Mode::AttitudeOnly,
            other => return Err(format!("unknown mode {other:?}")),
        };
    }
    sc.config
        .validate()
        .map_err(|e| format!("integrator overrides: {e}"))?;

    let dir = out_dir(out);
    let start = std::time::Instant::now();
    let result = simulate(&sc).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();

    write_file(&dir, "trajectory.csv", &csvio::trajectory_csv(&result.trajectory))?;
    write_file(&dir, "controls.csv", &csvio::controls_csv(&result.trajectory))?;
    let summary = summary::build(
        scenario_path,
        mode_name(sc.mode),
        &result,
        sc.config.dt,
        sc.config.duration,
        sc.config.decimation,
        wall,
    );
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir, "summary.json", &json)?;

    match result.outcome {
        SimOutcome::Completed => {
            println!(
                "completed: {} samples in {:.2} s wall; |r_b(T)| = {:.3e}, |eta(T)| = {:.3e}, \
                 |o_p3(T)| = {:.3e}, |Omega_p(T)| = {:.3e}",
                summary.samples,
                wall,
                summary.terminal.r_b_norm,
                summary.terminal.eta_norm,
                summary.terminal.o_p3_abs,
                summary.terminal.omega_p_norm
            );
            println!("outputs in {}", dir.display());
            Ok(0)
        }
        SimOutcome::Diverged { t, max_norm } => {
            eprintln!(
                "diverged at t = {t:.3} s (state norm {max_norm:.3e}); partial outputs in {}",
                dir.display()
            );
            Ok(2)
        }
    }
}

fn cmd_verify(suite: &str, scenario_path: &str, seed: u64, out: Option<PathBuf>) -> Result<u8, String> {
    let (_, sc) = scenario::load(scenario_path).map_err(|e| e.to_string())?;
    let report = verify_suites::run_suite(suite, &sc, seed)?;
    println!("suite {:12}  seed {}", report.suite, report.seed);
    for check in &report.checks {
        println!(
            "  [{}] {:55} {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.details
        );
    }
    let dir = out_dir(out);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&dir, "verify.json", &json)?;
    if report.all_passed {
        println!("all {} checks passed", report.checks.len());
        Ok(0)
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        eprintln!("{failed} check(s) failed");
        Ok(3)
    }
}

const FIGURES: &[(&str, &str, &str, &[&str], &[&str])] = &[
    (
        "attitude",
        "Plate attitude quaternion",
        "component [-]",
        &["quat_pw", "quat_px", "quat_py", "quat_pz"],
        &["w", "x", "y", "z"],
    ),
    (
        "omega",
        "Plate angular velocity",
        "Omega_p [rad/s]",
        &["Omega_px", "Omega_py", "Omega_pz"],
        &["x", "y", "z"],
    ),
    (
        "plate-pos",
        "Plate position",
        "o_p [m]",
        &["o_px", "o_py", "o_pz"],
        &["x", "y", "z"],
    ),
    (
        "plate-vel",
        "Plate velocity",
        "v_p [m/s]",
        &["v_px", "v_py", "v_pz"],
        &["x", "y", "z"],
    ),
    (
        "ball-pos",
        "Ball position on the plate",
        "r_b [m]",
        &["r_b1", "r_b2"],
        &["r_b1", "r_b2"],
    ),
    (
        "ball-vel",
        "Ball velocity on the plate",
        "rdot_b [m/s]",
        &["rdot_b1", "rdot_b2"],
        &["rdot_b1", "rdot_b2"],
    ),
];

fn cmd_plot(traj: &Path, out: Option<PathBuf>, figs: &str) -> Result<u8, String> {
    let text = std::fs::read_to_string(traj).map_err(|e| format!("{}: {e}", traj.display()))?;
    let table = csvio::Table::parse(&text).map_err(|e| format!("{}: {e}", traj.display()))?;
    let ts = table.column("t")?;
    let selected: Vec<&str> = if figs == "all" {
        FIGURES.iter().map(|f| f.0).collect()
    } else {
        figs.split(',').map(|s| s.trim()).collect()
    };
    let dir = out_dir(out);
    for name in selected {
        let Some((_, title, y_label, columns, labels)) = FIGURES.iter().find(|f| f.0 == name) else {
            return Err(format!(
                "unknown figure {name:?}; expected attitude, omega, plate-pos, plate-vel, ball-pos, ball-vel, or all"
            ));
        };
        let series: Vec<svg::Series> = columns
            .iter()
            .zip(labels.iter())
            .map(|(col, label)| {
                Ok(svg::Series {
                    label,
                    values: table.column(col)?,
                })
            })
            .collect::<Result<_, String>>()?;
        let chart = svg::line_chart(title, "t [s]", y_label, &ts, &series);
        write_file(&dir, &format!("{name}.svg"), &chart)?;
        println!("wrote {}", dir.join(format!("{name}.svg")).display());
    }
    Ok(0)
}

fn apply_param(
    sc: &mut plate_swarm_core::sim::Scenario,
    param: &str,
    value: f64,
) -> Result<(), String> {
    let g = &mut sc.gains;
    match param {
        "eps" => g.eps = value,
        "k1" => g.k1 = value,
        "k2" => g.k2 = value,
        "k3" => g.k3 = value,
        "k4" => g.k4 = value,
        "k5" => g.k5 = value,
        "k6" => g.k6 = value,
        "k7" => g.k7 = value,
        "k8" => g.k8 = value,
        "k_R" => g.k_r = value,
        "k_Omega" => g.k_omega = value,
        other => return Err(format!("unknown sweep parameter {other:?}")),
    }
    Ok(())
}

struct SweepRow {
    value: f64,
    converged: bool,
    diverged_at: Option<f64>,
    r_b: f64,
    eta: f64,
    o_p3: f64,
    omega_p: f64,
    peak_e_r: f64,
    rate: f64,
    r_squared: f64,
}

fn sweep_one(base: &plate_swarm_core::sim::Scenario, param: &str, value: f64, dir: &Path) -> SweepRow {
    let failed = |diverged_at| SweepRow {
        value,
        converged: false,
        diverged_at,
        r_b: f64::NAN,
        eta: f64::NAN,
        o_p3: f64::NAN,
        omega_p: f64::NAN,
        peak_e_r: f64::NAN,
        rate: f64::NAN,
        r_squared: f64::NAN,
    };
    let mut sc = base.clone();
    apply_param(&mut sc, param, value).expect("parameter validated before spawning");
    let result = match simulate(&sc) {
        Ok(result) => result,
        Err(e) => {
            eprintln!("{param} = {value}: {e}");
            return failed(Some(0.0));
        }
    };
    let run_dir = dir.join(format!("{param}={value}"));
    let _ = std::fs::create_dir_all(&run_dir);
    let _ = std::fs::write(
        run_dir.join("trajectory.csv"),
        csvio::trajectory_csv(&result.trajectory),
    );
    let last = result.trajectory.terminal();
    let eta = plate_swarm_core::geom::attitude_error_plate(&last.state.r_p).norm();
    let (rate, r_squared, peak) = match boundary_layer_rate(&result.trajectory) {
        Ok(report) => (
            report.fit.map(|f| f.rate).unwrap_or(0.0),
            report.fit.map(|f| f.r_squared).unwrap_or(0.0),
            report.peak,
        ),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };
    let (converged, diverged_at) = match result.outcome {
        SimOutcome::Completed => (
            last.state.r_b.norm() < 1e-2
                && eta < 1e-3
                && last.state.o_p.z.abs() < 1e-2
                && last.state.omega_p.norm() < 1e-3,
            None,
        ),
        SimOutcome::Diverged { t, .. } => (false, Some(t)),
    };
    SweepRow {
        value,
        converged,
        diverged_at,
        r_b: last.state.r_b.norm(),
        eta,
        o_p3: last.state.o_p.z.abs(),
        omega_p: last.state.omega_p.norm(),
        peak_e_r: peak,
        rate,
        r_squared,
    }
}

fn cmd_sweep(scenario_path: &str, param: &str, values: &str, out: Option<PathBuf>) -> Result<u8, String> {
    let (_, base) = scenario::load(scenario_path).map_err(|e| e.to_string())?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("value {v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err("no sweep values given".into());
    }
    apply_param(&mut base.clone(), param, values[0])?;

    let dir = out_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;

    // One worker per value; each writes into its own subdirectory.
    let rows: Vec<SweepRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = values
            .iter()
            .map(|&value| {
                let base = &base;
                let dir = &dir;
                scope.spawn(move || sweep_one(base, param, value, dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });

    let mut csv = String::from(
        "param,value,converged,diverged_at,terminal_r_b,terminal_eta,terminal_o_p3,terminal_omega_p,peak_e_R,decay_rate,decay_r2\n",
    );
    let mut any_ok = false;
    for row in &rows {
        any_ok |= row.diverged_at.is_none();
        csv.push_str(&format!(
            "{param},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6}\n",
            row.value,
            row.converged,
            row.diverged_at.map(|t| format!("{t:.3}")).unwrap_or_default(),
            row.r_b,
            row.eta,
            row.o_p3,
            row.omega_p,
            row.peak_e_r,
            row.rate,
            row.r_squared,
        ));
        println!(
            "{param} = {:<8} converged = {:5} terminal |r_b| = {:9.3e} decay rate = {:9.3e} (R^2 {:.4})",
            row.value, row.converged, row.r_b, row.rate, row.r_squared
        );
    }
    write_file(&dir, "sweep.csv", &csv)?;
    Ok(if any_ok { 0 } else { 2 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            dt,
            duration,
            mode,
        } => cmd_simulate(&scenario, out, dt, duration, mode),
        Command::Verify {
            suite,
            scenario,
            seed,
            out,
        } => cmd_verify(&suite, &scenario, seed, out),
        Command::Plot { traj, out, figs } => cmd_plot(&traj, out, &figs),
        Command::Sweep {
            scenario,
            param,
            values,
            out,
        } => cmd_sweep(&scenario, &param, &values, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
