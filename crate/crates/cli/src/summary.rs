//! Run summaries: terminal state, convergence metrics, residual maxima,
//! energy drift, and Lyapunov monotonicity, serialized as `summary.json`.

use plate_swarm_core::geom::attitude_error_plate;
use plate_swarm_core::sim::{SimOutcome, SimResult, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub mode: String,
    pub method: String,
    pub dt: f64,
    pub duration: f64,
    pub decimation: usize,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<f64>,
    pub samples: usize,
    pub wall_time_s: f64,
    pub terminal: TerminalMetrics,
    pub tail: TailMetrics,
    pub max_residuals: ResidualMetrics,
    pub energy: EnergyMetrics,
    pub lyapunov: LyapunovMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TerminalMetrics {
    pub t: f64,
    pub r_b_norm: f64,
    pub eta_norm: f64,
    pub o_p3_abs: f64,
    pub omega_p_norm: f64,
    pub o_p: [f64; 3],
    pub v_p: [f64; 3],
}

/// Behavior over the final stretch of the run: horizontal velocity
/// variation and horizontal position growth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TailMetrics {
    pub window_s: f64,
    pub v_p1_variation: f64,
    pub v_p2_variation: f64,
    pub o_p1_abs_start: f64,
    pub o_p1_abs_end: f64,
    pub o_p2_abs_start: f64,
    pub o_p2_abs_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResidualMetrics {
    pub q_unit: f64,
    pub omega_orth: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnergyMetrics {
    pub initial: f64,
    pub terminal: f64,
    pub max_rel_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LyapunovMetrics {
    pub v0: f64,
    pub transient_window_s: f64,
    /// Largest sample-to-sample increase of V after the window.
    pub max_increase_after_window: f64,
    /// Earliest time after which V is non-increasing (to 1e-9 V0).
    pub earliest_monotone_from: f64,
}

pub const TAIL_WINDOW: f64 = 5.0;
pub const TRANSIENT_WINDOW: f64 = 0.5;

pub fn tail_metrics(traj: &Trajectory, window: f64) -> TailMetrics {
    let t_end = traj.terminal().t;
    let t_start = (t_end - window).max(0.0);
    let mut v1 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut v2 = (f64::INFINITY, f64::NEG_INFINITY);
    for s in traj.samples.iter().filter(|s| s.t >= t_start) {
        v1 = (v1.0.min(s.state.v_p.x), v1.1.max(s.state.v_p.x));
        v2 = (v2.0.min(s.state.v_p.y), v2.1.max(s.state.v_p.y));
    }
    let start = traj.at_time(t_start);
    let end = traj.terminal();
    TailMetrics {
        window_s: window,
        v_p1_variation: v1.1 - v1.0,
        v_p2_variation: v2.1 - v2.0,
        o_p1_abs_start: start.state.o_p.x.abs(),
        o_p1_abs_end: end.state.o_p.x.abs(),
        o_p2_abs_start: start.state.o_p.y.abs(),
        o_p2_abs_end: end.state.o_p.y.abs(),
    }
}

pub fn residual_metrics(traj: &Trajectory) -> ResidualMetrics {
    let mut m = ResidualMetrics {
        q_unit: 0.0,
        omega_orth: 0.0,
        rotation: 0.0,
    };
    for s in &traj.samples {
        m.q_unit = m.q_unit.max(s.diag.res_q_max);
        m.omega_orth = m.omega_orth.max(s.diag.res_omega_max);
        m.rotation = m.rotation.max(s.diag.res_rot_max);
    }
    m
}

pub fn energy_metrics(traj: &Trajectory) -> EnergyMetrics {
    let e0 = traj.samples[0].diag.e_kin + traj.samples[0].diag.e_pot;
    let scale = e0.abs().max(1e-12);
    let mut max_rel = 0.0f64;
    for s in &traj.samples {
        let e = s.diag.e_kin + s.diag.e_pot;
        max_rel = max_rel.max(((e - e0) / scale).abs());
    }
    let last = traj.terminal();
    EnergyMetrics {
        initial: e0,
        terminal: last.diag.e_kin + last.diag.e_pot,
        max_rel_drift: max_rel,
    }
}

pub fn lyapunov_metrics(traj: &Trajectory, window: f64) -> LyapunovMetrics {
    let v0 = traj.samples[0].diag.v_lyap;
    let tolerance = 1e-9 * v0.abs().max(1e-12);
    let mut max_increase = 0.0f64;
    let mut last_increase_t = 0.0f64;
    for w in traj.samples.windows(2) {
        if w[1].t >= window && w[1].diag.v_lyap > w[0].diag.v_lyap + tolerance {
            max_increase = max_increase.max(w[1].diag.v_lyap - w[0].diag.v_lyap);
            last_increase_t = w[1].t;
        }
    }
    LyapunovMetrics {
        v0,
        transient_window_s: window,
        max_increase_after_window: max_increase,
        earliest_monotone_from: last_increase_t,
    }
}

pub fn build(
    scenario_path: &str,
    mode: &str,
    result: &SimResult,
    dt: f64,
    duration: f64,
    decimation: usize,
    wall_time_s: f64,
) -> Summary {
    let traj = &result.trajectory;
    let last = traj.terminal();
    let eta = attitude_error_plate(&last.state.r_p);
    let (outcome, diverged_at) = match result.outcome {
        SimOutcome::Completed => ("completed".to_string(), None),
        SimOutcome::Diverged { t, .. } => ("diverged".to_string(), Some(t)),
    };
    Summary {
        scenario: scenario_path.to_string(),
        mode: mode.to_string(),
        method: plate_swarm_core::sim::METHOD.to_string(),
        dt,
        duration,
        decimation,
        outcome,
        diverged_at,
        samples: traj.len(),
        wall_time_s,
        terminal: TerminalMetrics {
            t: last.t,
            r_b_norm: last.state.r_b.norm(),
            eta_norm: eta.norm(),
            o_p3_abs: last.state.o_p.z.abs(),
            omega_p_norm: last.state.omega_p.norm(),
            o_p: [last.state.o_p.x, last.state.o_p.y, last.state.o_p.z],
            v_p: [last.state.v_p.x, last.state.v_p.y, last.state.v_p.z],
        },
        tail: tail_metrics(traj, TAIL_WINDOW),
        max_residuals: residual_metrics(traj),
        energy: energy_metrics(traj),
        lyapunov: lyapunov_metrics(traj, TRANSIENT_WINDOW),
    }
}
