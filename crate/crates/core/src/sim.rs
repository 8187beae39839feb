//! Fixed-step, manifold-preserving integration of the closed-loop and
//! passive systems, plus trajectory recording.
//!
//! The integrator is a 4-stage Runge-Kutta of Munthe-Kaas type: rotation and
//! sphere variables are advanced in exponential coordinates relative to the
//! step's base point, with the stage rates pulled back through the truncated
//! inverse of the exponential differential (`v -> v +- [th, v]/2 + [th, [th, v]]/12`).
//! This keeps the rotations orthogonal and the tether directions unit by
//! construction and retains the full 4th order of the tableau on the group
//! variables; a plain exponential of averaged body rates would drop to 2nd
//! order on non-commuting flows. After each step the state is projected:
//! tether directions renormalized, tether rates stripped of their along-cable
//! component, rotations re-orthonormalized.

use thiserror::Error;

use crate::control::{compute_controls, ControlError, ControlTrace, ControllerMemory, Gains};
use crate::geom::{attitude_error_plate, exp_so3, log_so3, Mat3, Rotation, UnitVec, Vec2, Vec3};
use crate::model::{
    body_positions, full_dynamics, kinetic_energy, potential_energy, ControlInput, ModelError,
    SystemParams, SystemState,
};
use crate::verify::{lyapunov_v, lyapunov_v2};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step diverged: state norm {max_norm:.3e} exceeds {DIVERGENCE_NORM:.0e}")]
    StepDiverged { max_norm: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("control failure at tether/quadrotor: {0}")]
    Control(#[from] ControlError),
}

/// Fixed-step integrator settings. The method is the 4-stage Runge-Kutta
/// with exponential (Munthe-Kaas) updates described at module level; see
/// [`METHOD`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub duration: f64,
    /// Control is recomputed every `decimation` steps and held in between.
    pub decimation: usize,
    /// Constraint residuals are required to stay below this at every sample.
    pub projection_tol: f64,
}

/// Identifier of the integration scheme, recorded in run summaries.
pub const METHOD: &str = "rk4-munthe-kaas";

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            duration: 30.0,
            decimation: 1,
            projection_tol: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if self.duration < 0.0 {
            return Err(SimError::InvalidScenario("duration must be non-negative".into()));
        }
        if self.decimation == 0 {
            return Err(SimError::InvalidScenario("decimation must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ClosedLoop,
    Passive,
    AttitudeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub gains: Gains,
    pub initial: SystemState,
    pub config: IntegratorConfig,
    pub mode: Mode,
}

/// Per-sample diagnostics recorded alongside the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub e_kin: f64,
    pub e_pot: f64,
    pub v_lyap: f64,
    pub v2: f64,
    pub res_q_max: f64,
    pub res_omega_max: f64,
    pub res_rot_max: f64,
    pub o_ball: Vec3,
    pub o_quads: [Vec3; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: SystemState,
    pub trace: Option<ControlTrace>,
    pub diag: Diagnostics,
}

/// Time-indexed record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn terminal(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    /// Sample closest to the given time.
    pub fn at_time(&self, t: f64) -> &Sample {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectory has at least one sample")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimOutcome {
    Completed,
    Diverged { t: f64, max_norm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub trajectory: Trajectory,
    pub outcome: SimOutcome,
}

/// Constraint residuals of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResiduals {
    pub q_unit: [f64; 3],
    pub omega_orth: [f64; 3],
    pub rot_plate: f64,
    pub rot_quads: [f64; 3],
}

impl ConstraintResiduals {
    pub fn max_q(&self) -> f64 {
        self.q_unit.iter().fold(0.0, |a, b| a.max(*b))
    }
    pub fn max_omega(&self) -> f64 {
        self.omega_orth.iter().fold(0.0, |a, b| a.max(*b))
    }
    pub fn max_rot(&self) -> f64 {
        self.rot_quads.iter().fold(self.rot_plate, |a, b| a.max(*b))
    }
}

/// Reports `||q|-1|`, `|omega . q|`, and the orthogonality residuals of the
/// plate and quadrotor rotation matrices.
pub fn constraint_residuals(s: &SystemState) -> ConstraintResiduals {
    ConstraintResiduals {
        q_unit: std::array::from_fn(|i| (s.tethers[i].q.as_vec().norm() - 1.0).abs()),
        omega_orth: std::array::from_fn(|i| s.tethers[i].omega.dot(s.tethers[i].q.as_vec()).abs()),
        rot_plate: s.r_p.ortho_residual(),
        rot_quads: std::array::from_fn(|i| s.quads[i].r.ortho_residual()),
    }
}

/// Offsets from a step's base state: plain differences for linear variables,
/// exponential coordinates for rotations and tether directions.
#[derive(Debug, Clone, Copy)]
struct ChartPoint {
    d_o_p: Vec3,
    d_v_p: Vec3,
    theta_p: Vec3,
    d_omega_p: Vec3,
    d_r_b: Vec2,
    d_rdot_b: Vec2,
    phi: [Vec3; 3],
    d_omega_t: [Vec3; 3],
    theta_q: [Vec3; 3],
    d_omega_q: [Vec3; 3],
}

impl ChartPoint {
    fn zero() -> Self {
        ChartPoint {
            d_o_p: Vec3::zeros(),
            d_v_p: Vec3::zeros(),
            theta_p: Vec3::zeros(),
            d_omega_p: Vec3::zeros(),
            d_r_b: Vec2::zeros(),
            d_rdot_b: Vec2::zeros(),
            phi: [Vec3::zeros(); 3],
            d_omega_t: [Vec3::zeros(); 3],
            theta_q: [Vec3::zeros(); 3],
            d_omega_q: [Vec3::zeros(); 3],
        }
    }

    fn scaled(&self, a: f64) -> Self {
        ChartPoint {
            d_o_p: self.d_o_p * a,
            d_v_p: self.d_v_p * a,
            theta_p: self.theta_p * a,
            d_omega_p: self.d_omega_p * a,
            d_r_b: self.d_r_b * a,
            d_rdot_b: self.d_rdot_b * a,
            phi: self.phi.map(|v| v * a),
            d_omega_t: self.d_omega_t.map(|v| v * a),
            theta_q: self.theta_q.map(|v| v * a),
            d_omega_q: self.d_omega_q.map(|v| v * a),
        }
    }

    fn add(&self, o: &ChartPoint) -> Self {
        ChartPoint {
            d_o_p: self.d_o_p + o.d_o_p,
            d_v_p: self.d_v_p + o.d_v_p,
            theta_p: self.theta_p + o.theta_p,
            d_omega_p: self.d_omega_p + o.d_omega_p,
            d_r_b: self.d_r_b + o.d_r_b,
            d_rdot_b: self.d_rdot_b + o.d_rdot_b,
            phi: std::array::from_fn(|i| self.phi[i] + o.phi[i]),
            d_omega_t: std::array::from_fn(|i| self.d_omega_t[i] + o.d_omega_t[i]),
            theta_q: std::array::from_fn(|i| self.theta_q[i] + o.theta_q[i]),
            d_omega_q: std::array::from_fn(|i| self.d_omega_q[i] + o.d_omega_q[i]),
        }
    }
}

fn reconstruct(base: &SystemState, c: &ChartPoint) -> SystemState {
    let mut s = base.clone();
    s.o_p += c.d_o_p;
    s.v_p += c.d_v_p;
    s.r_p = base.r_p * exp_so3(&c.theta_p);
    s.omega_p += c.d_omega_p;
    s.r_b += c.d_r_b;
    s.rdot_b += c.d_rdot_b;
    for i in 0..3 {
        s.tethers[i].q = UnitVec::normalized(exp_so3(&c.phi[i]) * *base.tethers[i].q.as_vec());
        s.tethers[i].omega = base.tethers[i].omega + c.d_omega_t[i];
        s.quads[i].r = base.quads[i].r * exp_so3(&c.theta_q[i]);
        s.quads[i].omega = base.quads[i].omega + c.d_omega_q[i];
    }
    s
}

/// Truncated `dexpinv` for a body-frame rate (`Rdot = R hat(w)`):
/// `w + [th, w]/2 + [th, [th, w]]/12`.
fn dexpinv_body(theta: &Vec3, w: &Vec3) -> Vec3 {
    w + theta.cross(w) * 0.5 + theta.cross(&theta.cross(w)) / 12.0
}

/// Truncated `dexpinv` for a spatial rate (`qdot = hat(w) q`):
/// `w - [th, w]/2 + [th, [th, w]]/12`.
fn dexpinv_spatial(theta: &Vec3, w: &Vec3) -> Vec3 {
    w - theta.cross(w) * 0.5 + theta.cross(&theta.cross(w)) / 12.0
}

/// Chart-coordinate rate of change at the given offset from the base state.
fn chart_rate(
    base: &SystemState,
    c: &ChartPoint,
    u: &ControlInput,
    p: &SystemParams,
) -> Result<ChartPoint, ModelError> {
    let s = reconstruct(base, c);
    let acc = full_dynamics(&s, u, p)?;
    Ok(ChartPoint {
        d_o_p: s.v_p,
        d_v_p: acc.oddot_p,
        theta_p: dexpinv_body(&c.theta_p, &s.omega_p),
        d_omega_p: acc.omegadot_p,
        d_r_b: s.rdot_b,
        d_rdot_b: acc.rddot_b,
        phi: std::array::from_fn(|i| dexpinv_spatial(&c.phi[i], &s.tethers[i].omega)),
        d_omega_t: acc.omegadot_t,
        theta_q: std::array::from_fn(|i| dexpinv_body(&c.theta_q[i], &s.quads[i].omega)),
        d_omega_q: acc.omegadot_q,
    })
}

/// One fixed step of the plant under a held control input.
pub fn step(
    s: &SystemState,
    u: &ControlInput,
    p: &SystemParams,
    dt: f64,
) -> Result<SystemState, SimError> {
    assert!(dt > 0.0, "dt must be positive");
    let base_norm = s.max_abs();
    if !base_norm.is_finite() || base_norm > DIVERGENCE_NORM {
        return Err(SimError::StepDiverged { max_norm: base_norm });
    }
    // A singular stage matrix on a runaway state is divergence, not a
    // parameter problem: genuinely degenerate parameters fail on the first
    // step from a sane state, while a runaway reaches absurd magnitudes
    // before its stage evaluations overflow.
    let classify = |e: SimError| -> SimError {
        match e {
            SimError::Model(ModelError::SingularMassMatrix { .. }) if base_norm > 1e4 => {
                SimError::StepDiverged { max_norm: base_norm }
            }
            other => other,
        }
    };
    let k1 = chart_rate(s, &ChartPoint::zero(), u, p).map_err(SimError::from).map_err(classify)?;
    let k2 = chart_rate(s, &k1.scaled(dt * 0.5), u, p).map_err(SimError::from).map_err(classify)?;
    let k3 = chart_rate(s, &k2.scaled(dt * 0.5), u, p).map_err(SimError::from).map_err(classify)?;
    let k4 = chart_rate(s, &k3.scaled(dt), u, p).map_err(SimError::from).map_err(classify)?;
    let increment = k1
        .add(&k2.scaled(2.0))
        .add(&k3.scaled(2.0))
        .add(&k4)
        .scaled(dt / 6.0);
    let mut next = reconstruct(s, &increment);
    next.project();
    let max_norm = next.max_abs();
    if !max_norm.is_finite() || max_norm > DIVERGENCE_NORM {
        return Err(SimError::StepDiverged { max_norm });
    }
    Ok(next)
}

/// One step of the attitude-only loop `omegadot_p = -k2 eta - k1 Omega_p`,
/// everything else frozen.
fn attitude_step(r_p: &Rotation, omega_p: &Vec3, g: &Gains, dt: f64) -> (Rotation, Vec3) {
    let rate = |theta: &Vec3, omega: &Vec3| -> (Vec3, Vec3) {
        let r = *r_p * exp_so3(theta);
        let omegadot = -attitude_error_plate(&r) * g.k2 - omega * g.k1;
        (dexpinv_body(theta, omega), omegadot)
    };
    let (t1, w1) = rate(&Vec3::zeros(), omega_p);
    let (t2, w2) = rate(&(t1 * (dt * 0.5)), &(omega_p + w1 * (dt * 0.5)));
    let (t3, w3) = rate(&(t2 * (dt * 0.5)), &(omega_p + w2 * (dt * 0.5)));
    let (t4, w4) = rate(&(t3 * dt), &(omega_p + w3 * dt));
    let theta = (t1 + t2 * 2.0 + t3 * 2.0 + t4) * (dt / 6.0);
    let omega = omega_p + (w1 + w2 * 2.0 + w3 * 2.0 + w4) * (dt / 6.0);
    let mut r = *r_p * exp_so3(&theta);
    r.reorthonormalize();
    (r, omega)
}

fn diagnostics(s: &SystemState, sc: &Scenario) -> Diagnostics {
    let res = constraint_residuals(s);
    let (o_ball, o_quads) = body_positions(s, &sc.params);
    Diagnostics {
        e_kin: kinetic_energy(s, &sc.params),
        e_pot: potential_energy(s, &sc.params),
        v_lyap: lyapunov_v(s, &sc.gains, sc.gains.c1, sc.gains.c2),
        v2: lyapunov_v2(&s.r_p, &s.omega_p, &sc.gains, sc.gains.c0),
        res_q_max: res.max_q(),
        res_omega_max: res.max_omega(),
        res_rot_max: res.max_rot(),
        o_ball,
        o_quads,
    }
}

/// Runs a scenario to completion (or divergence), recording every sample.
///
/// Closed-loop mode recomputes the controls every `decimation` steps and
/// holds them in between; passive mode applies zero thrust and moment;
/// attitude-only mode integrates just the plate attitude loop.
pub fn simulate(sc: &Scenario) -> Result<SimResult, SimError> {
    sc.params.validate()?;
    sc.gains.validate().map_err(SimError::InvalidScenario)?;
    sc.config.validate()?;
    let mut state = sc.initial.clone();
    state.project();
    state
        .validate(crate::geom::tol::ALGEBRAIC)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;

    let dt = sc.config.dt;
    let n_steps = (sc.config.duration / dt).round() as usize;
    let mut trajectory = Trajectory {
        samples: Vec::with_capacity(n_steps + 1),
    };

    let mut memory = ControllerMemory::new();
    let mut held: Option<(ControlInput, ControlTrace)> = None;

    for k in 0..=n_steps {
        let t = k as f64 * dt;

        if sc.mode == Mode::ClosedLoop && k % sc.config.decimation == 0 {
            let (input, trace, new_memory) =
                compute_controls(&state, &sc.gains, &memory, &sc.params, t, dt)?;
            memory = new_memory;
            held = Some((input, trace));
        }

        trajectory.samples.push(Sample {
            t,
            state: state.clone(),
            trace: held.as_ref().map(|(_, trace)| trace.clone()),
            diag: diagnostics(&state, sc),
        });

        if k == n_steps {
            break;
        }

        let stepped = match sc.mode {
            Mode::ClosedLoop => {
                let (input, _) = held.as_ref().expect("controls computed before first step");
                step(&state, input, &sc.params, dt)
            }
            Mode::Passive => step(&state, &ControlInput::zero(), &sc.params, dt),
            Mode::AttitudeOnly => {
                let (r, omega) = attitude_step(&state.r_p, &state.omega_p, &sc.gains, dt);
                let mut next = state.clone();
                next.r_p = r;
                next.omega_p = omega;
                Ok(next)
            }
        };
        match stepped {
            Ok(next) => state = next,
            Err(SimError::StepDiverged { max_norm }) => {
                return Ok(SimResult {
                    trajectory,
                    outcome: SimOutcome::Diverged {
                        t: t + dt,
                        max_norm,
                    },
                });
            }
            Err(e) => return Err(e),
        }
    }

    Ok(SimResult {
        trajectory,
        outcome: SimOutcome::Completed,
    })
}

/// Distance between states: euclidean on linear variables, geodesic on the
/// rotation and sphere variables. Used by the convergence-order check.
pub fn state_distance(a: &SystemState, b: &SystemState) -> f64 {
    let mut d2 = (a.o_p - b.o_p).norm_squared()
        + (a.v_p - b.v_p).norm_squared()
        + (a.omega_p - b.omega_p).norm_squared()
        + (a.r_b - b.r_b).norm_squared()
        + (a.rdot_b - b.rdot_b).norm_squared();
    d2 += log_so3(&(a.r_p.transpose() * b.r_p)).norm_squared();
    for i in 0..3 {
        d2 += (a.tethers[i].q.as_vec() - b.tethers[i].q.as_vec()).norm_squared();
        d2 += (a.tethers[i].omega - b.tethers[i].omega).norm_squared();
        d2 += log_so3(&(a.quads[i].r.transpose() * b.quads[i].r)).norm_squared();
        d2 += (a.quads[i].omega - b.quads[i].omega).norm_squared();
    }
    d2.sqrt()
}

/// Total linear momentum of the assembly; conserved when gravity and
/// controls are absent.
pub fn linear_momentum(s: &SystemState, p: &SystemParams) -> Vec3 {
    let e = crate::model::embedding();
    let mut mom = s.v_p * p.m_p;
    mom += (s.v_p + s.r_p * (s.omega_p.cross(&(e * s.r_b))) + s.r_p * (e * s.rdot_b)) * p.m_b;
    for i in 0..3 {
        mom += s.quad_velocity(i, p) * p.quads[i].mass;
    }
    mom
}

/// Rotation matrices used by bundled scenarios and tests.
pub fn roll_90deg() -> Mat3 {
    Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}
