//! The control stack, from plate objectives down to per-quadrotor inputs.
//!
//! One control tick runs:
//!
//! 1. [`pfl_inputs`]: partially feedback-linearizing virtual inputs `U1`
//!    (plate translation) and `U2` (plate rotation).
//! 2. [`force_torque_from_u`]: the net plate wrench realizing `(U1, U2)`
//!    through the ball-and-plate metric.
//! 3. [`allocate_tensions`]: minimum-norm tether tensions producing that
//!    wrench through the attachment geometry.
//! 4. [`parallel_controls`]: tether-parallel thrust components that transmit
//!    the allocated tensions.
//! 5. [`desired_tether_direction`] + [`perpendicular_controls`]: align each
//!    tether with its allocated tension direction.
//! 6. [`quadrotor_attitude_setpoint`] + [`quadrotor_inputs`]: thrust
//!    magnitude and body moment so the quadrotor's yaw axis tracks the
//!    commanded thrust vector on a fast timescale set by `eps`.
//!
//! Desired tether rates and accelerations come from finite differences of
//! the allocation along the designed flow (virtual steps at one instant);
//! desired attitude rates from backward differences of the filtered
//! setpoints over [`ControllerMemory`]. The first tick uses zero rates.

use thiserror::Error;

use crate::geom::{
    attitude_error_plate, hat_mat, log_so3, quad_attitude_errors, tol, Rotation, UnitVec, Vec2,
    Vec3,
};
use crate::model::{
    bias_terms, embedding, mass_blocks, ControlInput, SystemParams, SystemState, TensionSet, Vec6,
};

/// Tensions below this magnitude have no usable direction; the previous
/// desired direction is held.
pub const MU_MIN: f64 = 1e-6;
/// Commanded thrusts below this magnitude have no usable direction; the
/// previous attitude setpoint is held.
pub const F_MIN: f64 = 1e-6;
/// Minimum angle between the reference heading and the thrust axis before
/// the fallback heading is used.
pub const GIMBAL_MIN_ANGLE: f64 = std::f64::consts::PI / 180.0;
/// Guards on the finite-difference estimates of desired rates; the true
/// feedforward signals are far below these, so the guards only trim spikes
/// caused by setpoint discontinuities (tension sign changes, heading
/// fallback switches).
pub const DESIRED_RATE_MAX: f64 = 100.0;
pub const DESIRED_ACCEL_MAX: f64 = 2000.0;
/// Virtual step used to differentiate the setpoints along the designed
/// flow. The desired tether directions are smooth functions of the state,
/// and the design fixes the state's rates (`oddot_p = U1`,
/// `Omegadot_p = U2`, the closed-loop ball equation), so their time
/// derivatives can be evaluated at one instant by re-running the pipeline
/// on a state advanced by this step. Differencing the setpoints across
/// control ticks instead would feed the loop's own noise back through a
/// 1/dt^2 gain.
pub const VIRTUAL_STEP: f64 = 1e-4;
/// Time constant of the first-order filter on each quadrotor's commanded
/// thrust direction. The raw direction is ill-conditioned whenever the
/// commanded magnitude is small, so the attitude setpoint follows a
/// smoothed direction whose angular rate is bounded by construction; the
/// filter converges to the raw direction wherever it varies slowly.
pub const THRUST_DIR_FILTER_TAU: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("tether {index}: tension magnitude below {MU_MIN} N, no usable direction")]
    DegenerateTension { index: usize },
    #[error("quadrotor {index}: commanded thrust below {F_MIN} N, no usable direction")]
    DegenerateThrust { index: usize },
    #[error("quadrotor {index}: reference heading within 1 degree of thrust axis")]
    GimbalDegeneracy { index: usize },
    #[error("attachment matrix rank-deficient (condition number {cond:.3e})")]
    RankDeficientAttachment { cond: f64 },
}

/// Controller constants. `k1..k6` drive the plate attitude, ball, and height
/// loops, `k7`/`k8` the tether alignment, `k_r`/`k_omega`/`eps` the quadrotor
/// attitude loop. `c0`, `c1`, `c2` are Lyapunov cross-term constants used
/// only by the verification module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    pub k_r: f64,
    pub k_omega: f64,
    pub eps: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Gains {
    /// Tuned defaults for the bundled scenarios. The loops are timescale
    /// separated: ball, height, and plate attitude close at about 2 rad/s
    /// (critically damped), the tether alignment at about 14 rad/s, and the
    /// quadrotor attitude at `sqrt(40)/eps` rad/s.
    pub fn defaults() -> Self {
        Gains {
            k1: 4.0,
            k2: 4.0,
            k3: 4.0,
            k4: 4.0,
            k5: 4.0,
            k6: 4.0,
            k7: 196.0,
            k8: 28.0,
            k_r: 0.0049 * 40.0,
            k_omega: 0.0049 * 12.0,
            eps: 0.05,
            c0: 0.01,
            c1: 0.01,
            c2: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("k5", self.k5),
            ("k6", self.k6),
            ("k7", self.k7),
            ("k8", self.k8),
            ("k_r", self.k_r),
            ("k_omega", self.k_omega),
            ("eps", self.eps),
            ("c0", self.c0),
            ("c1", self.c1),
            ("c2", self.c2),
        ];
        for (name, value) in named {
            if !(value > 0.0) {
                return Err(format!("gain {name} must be strictly positive, got {value}"));
            }
        }
        if self.eps > 1.0 {
            return Err(format!("eps must be at most 1, got {}", self.eps));
        }
        Ok(())
    }
}

/// Previous setpoints used for backward-difference estimates of the desired
/// tether and attitude rates, plus the last heading reference per quadrotor.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerMemory {
    prev: Option<MemorySnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
struct MemorySnapshot {
    t: f64,
    q_id: [UnitVec; 3],
    r_id: [Rotation; 3],
    omega_qid: [Vec3; 3],
    b1: [Vec3; 3],
    b3: [UnitVec; 3],
}

impl ControllerMemory {
    pub fn new() -> Self {
        ControllerMemory { prev: None }
    }
}

impl Default for ControllerMemory {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything the pipeline computed in one tick, for logging and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrace {
    pub u1: Vec3,
    pub u2: Vec3,
    pub force: Vec3,
    pub torque: Vec3,
    pub mu: [Vec3; 3],
    pub u_par: [Vec3; 3],
    pub u_perp: [Vec3; 3],
    pub u_cmd: [Vec3; 3],
    pub q_id: [UnitVec; 3],
    pub omega_id: [Vec3; 3],
    pub r_id: [Rotation; 3],
    pub omega_qid: [Vec3; 3],
    pub f: [f64; 3],
    pub moment: [Vec3; 3],
    pub e_r_norm: [f64; 3],
    pub e_omega_norm: [f64; 3],
}

/// Virtual inputs of the partially feedback-linearized plate dynamics:
/// `U1 = R e3 e3^T (-k5 v_p - k6 o_p) + (1/m_b) R E (-N1 + M11 (k4 r_b + k3 rdot_b))`,
/// `U2 = -k2 eta - k1 Omega_p`.
pub fn pfl_inputs(s: &SystemState, g: &Gains, p: &SystemParams) -> (Vec3, Vec3) {
    let e3 = Vec3::z();
    let (n1, _) = bias_terms(s, p);
    let m11 = mass_blocks(s, p).m11;
    let vertical = s.r_p * (e3 * e3.dot(&(-s.v_p * g.k5 - s.o_p * g.k6)));
    let ball_comp: Vec2 = -n1 + m11 * (s.r_b * g.k4 + s.rdot_b * g.k3);
    let u1 = vertical + s.r_p * (embedding() * ball_comp) / p.m_b;
    let eta = attitude_error_plate(&s.r_p);
    let u2 = -eta * g.k2 - s.omega_p * g.k1;
    (u1, u2)
}

/// The linearizing wrench:
/// `[F; tau] = N2 - M12^T M11^-1 N1 + (M22 - M12^T M11^-1 M12) [U1; U2]`.
/// Feeding it back through the decoupled dynamics yields exactly
/// `oddot_p = U1`, `omegadot_p = U2`.
pub fn force_torque_from_u(
    s: &SystemState,
    u1: &Vec3,
    u2: &Vec3,
    p: &SystemParams,
) -> (Vec3, Vec3) {
    let blocks = mass_blocks(s, p);
    let (n1, n2) = bias_terms(s, p);
    let m11_inv = 1.0 / p.m_b;
    let schur = blocks.m22 - blocks.m12.transpose() * blocks.m12 * m11_inv;
    let mut u_stack = Vec6::zeros();
    u_stack.fixed_rows_mut::<3>(0).copy_from(u1);
    u_stack.fixed_rows_mut::<3>(3).copy_from(u2);
    let wrench = n2 - blocks.m12.transpose() * n1 * m11_inv + schur * u_stack;
    (
        Vec3::new(wrench[0], wrench[1], wrench[2]),
        Vec3::new(wrench[3], wrench[4], wrench[5]),
    )
}

/// Minimum-norm tether tensions realizing the commanded wrench:
/// stacked plate-frame tensions `A^T (A A^T)^-1 [R^T F; tau]`, rotated back
/// to the inertial frame.
pub fn allocate_tensions(
    force: &Vec3,
    torque: &Vec3,
    r_p: &Rotation,
    p: &SystemParams,
) -> Result<TensionSet, ControlError> {
    let a = p.attachment_matrix();
    let gram = a * a.transpose();
    let svd = gram.svd(true, true);
    let sv = svd.singular_values;
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > tol::MAX_CONDITION {
        return Err(ControlError::RankDeficientAttachment { cond });
    }
    let mut rhs = Vec6::zeros();
    rhs.fixed_rows_mut::<3>(0).copy_from(&(r_p.transpose() * force));
    rhs.fixed_rows_mut::<3>(3).copy_from(torque);
    let y = svd
        .solve(&rhs, 0.0)
        .map_err(|_| ControlError::RankDeficientAttachment { cond })?;
    let stacked = a.transpose() * y;
    let mu = std::array::from_fn(|i| {
        let body = Vec3::new(stacked[3 * i], stacked[3 * i + 1], stacked[3 * i + 2]);
        *r_p * body
    });
    Ok(TensionSet { mu })
}

/// Tether-parallel thrust components. The Newton balance along tether `i`
/// with the designed accelerations substituted gives
/// `mu_i + q q^T m_i (U1 + R Omega^2 x_i - R x_i^ U2 + g e3 - l |omega|^2 q)`;
/// the result is projected onto the tether axis. Off-axis parts of an
/// allocated tension cannot be transmitted through a taut cable anyway (the
/// plate feels only the `q q^T` projection), and leaving them in would
/// disturb the perpendicular alignment loop, so the projection changes
/// nothing on the plate side while keeping `u_par` parallel to `q`.
pub fn parallel_controls(
    s: &SystemState,
    tensions: &TensionSet,
    u1: &Vec3,
    u2: &Vec3,
    p: &SystemParams,
) -> [Vec3; 3] {
    let e3 = Vec3::z();
    let om_hat = hat_mat(&s.omega_p);
    std::array::from_fn(|i| {
        let q = s.tethers[i].q.as_vec();
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        let bracket = u1 + s.r_p * (om_hat * om_hat * x_i) - s.r_p * (hat_mat(&x_i) * u2)
            + e3 * p.gravity
            - q * (l_i * s.tethers[i].omega.norm_squared());
        let raw = tensions.mu[i] + q * (q.dot(&bracket) * m_i);
        q * q.dot(&raw)
    })
}

/// Unit vector along the allocated tension; the tether alignment target.
pub fn desired_tether_direction(mu_i: &Vec3) -> Result<UnitVec, ControlError> {
    let norm = mu_i.norm();
    if norm <= MU_MIN {
        return Err(ControlError::DegenerateTension { index: usize::MAX });
    }
    Ok(UnitVec::normalized(*mu_i))
}

/// Tether-perpendicular thrust components driving `q_i` to `q_id`:
/// `u_perp = -m q^2 a + m l q^ (k7 e_q + k8 e_omega + (q . omega_d) qdot + q^2 omegadot_d)`
/// with `a_i = U1 + R Omega^2 x_i - R x_i^ U2 + g e3` (designed accelerations
/// substituted), `e_q = q_id x q`, and `e_omega = omega + q^2 omega_d`
/// (`= omega - omega_d + q (q . omega_d)`). The squared hat in `e_omega` is
/// what makes the error vanish at exact tracking; with a single hat the
/// loop settles at a standoff angle proportional to the target rate.
#[allow(clippy::too_many_arguments)]
pub fn perpendicular_controls(
    s: &SystemState,
    q_id: &[UnitVec; 3],
    omega_id: &[Vec3; 3],
    omegadot_id: &[Vec3; 3],
    u1: &Vec3,
    u2: &Vec3,
    g: &Gains,
    p: &SystemParams,
) -> [Vec3; 3] {
    let e3 = Vec3::z();
    let om_hat = hat_mat(&s.omega_p);
    std::array::from_fn(|i| {
        let q = s.tethers[i].q.as_vec();
        let omega = s.tethers[i].omega;
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        let a_i =
            u1 + s.r_p * (om_hat * om_hat * x_i) - s.r_p * (hat_mat(&x_i) * u2) + e3 * p.gravity;
        let e_q = q_id[i].as_vec().cross(&q);
        let qdot = omega.cross(&q);
        // q^2 v = q (q . v) - v for unit q.
        let hat_sq = |v: &Vec3| q * q.dot(v) - v;
        let e_omega = omega + hat_sq(&omega_id[i]);
        let feedback =
            e_q * g.k7 + e_omega * g.k8 + qdot * q.dot(&omega_id[i]) + hat_sq(&omegadot_id[i]);
        -hat_sq(&a_i) * m_i + q.cross(&feedback) * (m_i * l_i)
    })
}

/// Desired quadrotor attitude whose third column is the thrust direction
/// `b3 = u / |u|`, completed right-handed from the heading reference `b1`.
pub fn quadrotor_attitude_setpoint(u_i: &Vec3, b1: &UnitVec) -> Result<Rotation, ControlError> {
    let f = u_i.norm();
    if f <= F_MIN {
        return Err(ControlError::DegenerateThrust { index: usize::MAX });
    }
    let b3 = u_i / f;
    let cross = b3.cross(b1.as_vec());
    if cross.norm() < GIMBAL_MIN_ANGLE.sin() {
        return Err(ControlError::GimbalDegeneracy { index: usize::MAX });
    }
    // -b3^2 b1 = (I - b3 b3^T) b1, the projection of b1 perpendicular to b3.
    let col1 = (b1.as_vec() - b3 * b3.dot(b1.as_vec())).normalize();
    let col2 = cross.normalize();
    Ok(Rotation::from_matrix_unchecked(
        nalgebra::Matrix3::from_columns(&[col1, col2, b3]),
    ))
}

/// Thrust magnitude and body moment of one quadrotor:
/// `f = |u|` and
/// `M = -(k_R/eps^2) e_R - (k_Omega/eps) e_Omega + Omega x J Omega
///      - J (Omega^ R^T R_d Omega_d - R^T R_d Omegadot_d)`.
#[allow(clippy::too_many_arguments)]
pub fn quadrotor_inputs(
    u_i: &Vec3,
    r_i: &Rotation,
    omega_i: &Vec3,
    r_id: &Rotation,
    omega_id: &Vec3,
    omegadot_id: &Vec3,
    j_i: &crate::geom::Mat3,
    g: &Gains,
) -> (f64, Vec3) {
    let f = u_i.norm();
    let (e_r, e_omega) = quad_attitude_errors(r_i, omega_i, r_id, omega_id);
    let rel = r_i.matrix().transpose() * r_id.matrix();
    let moment = -e_r * (g.k_r / (g.eps * g.eps)) - e_omega * (g.k_omega / g.eps)
        + omega_i.cross(&(j_i * omega_i))
        - j_i * (hat_mat(omega_i) * (rel * omega_id) - rel * omegadot_id);
    (f, moment)
}

/// Discontinuity guard for derivative estimates: a rate or acceleration
/// beyond the plausible ceiling indicates a setpoint jump (a tension
/// crossing zero flips its direction by pi, a heading fallback switch turns
/// the attitude target), where differentiating is meaningless. The estimate
/// is dropped entirely for that tick; feeding the ceiling into the loop
/// would slam the feedback terms that consume these signals.
fn guard_estimate(v: Vec3, max: f64) -> Vec3 {
    if v.norm() > max {
        Vec3::zeros()
    } else {
        v
    }
}

/// Plate and ball variables advanced by `delta` along the designed flow:
/// `oddot_p = U1`, `Omegadot_p = U2`, and the closed-loop ball equation.
/// Tether and quadrotor states are left untouched.
fn advance_design(s: &SystemState, u1: &Vec3, u2: &Vec3, g: &Gains, delta: f64) -> SystemState {
    let e = embedding();
    let mut next = s.clone();
    next.o_p += s.v_p * delta;
    next.v_p += u1 * delta;
    next.r_p = s.r_p * crate::geom::exp_so3(&(s.omega_p * delta));
    next.omega_p += u2 * delta;
    let rddot = -s.r_b * g.k4 - s.rdot_b * g.k3
        + e.transpose() * (hat_mat(&(e * s.r_b)) * u2);
    next.r_b += s.rdot_b * delta;
    next.rdot_b += rddot * delta;
    next
}

/// Angular rate taking the unit vector `from` to `to` over `delta`.
fn spherical_rate(from: &UnitVec, to: &UnitVec, delta: f64) -> Vec3 {
    let qa = from.as_vec();
    let qb = to.as_vec();
    qa.cross(&((qb - qa) / delta))
}

/// Runs the whole pipeline for one tick. Returns the physically applied
/// input (thrust `f_i` along each quadrotor's current yaw axis, plus the
/// body moments), the full trace, and the updated memory.
///
/// Degenerate tensions or thrusts fall back to the previous setpoint (or to
/// the current state on the first tick) instead of erroring; the heading
/// reference starts at `e1` per quadrotor and switches to `e2` near gimbal
/// lock, with hysteresis through the memory.
pub fn compute_controls(
    s: &SystemState,
    g: &Gains,
    mem: &ControllerMemory,
    p: &SystemParams,
    t: f64,
    dt: f64,
) -> Result<(ControlInput, ControlTrace, ControllerMemory), ControlError> {
    assert!(dt > 0.0, "control interval must be positive");

    let (u1, u2) = pfl_inputs(s, g, p);
    let (force, torque) = force_torque_from_u(s, &u1, &u2, p);
    let tensions = allocate_tensions(&force, &torque, &s.r_p, p)?;
    let u_par = parallel_controls(s, &tensions, &u1, &u2, p);

    let prev = mem.prev.as_ref();
    if let Some(snapshot) = prev {
        assert!(t > snapshot.t, "controller memory timestamps must increase");
    }

    // Desired tether directions, holding the previous target when the
    // allocated tension is too small to define one.
    let q_id: [UnitVec; 3] = std::array::from_fn(|i| {
        desired_tether_direction(&tensions.mu[i]).unwrap_or_else(|_| match prev {
            Some(snapshot) => snapshot.q_id[i],
            None => s.tethers[i].q,
        })
    });

    // Desired tether rates and accelerations by differentiating the
    // allocation along the designed flow: re-run the wrench pipeline on
    // states advanced by one and two virtual steps.
    let delta = VIRTUAL_STEP;
    let stage = |sv: &SystemState,
                 fallback: &[UnitVec; 3]|
     -> Result<(Vec3, Vec3, TensionSet, [UnitVec; 3]), ControlError> {
        let (u1v, u2v) = pfl_inputs(sv, g, p);
        let (fv, tv) = force_torque_from_u(sv, &u1v, &u2v, p);
        let muv = allocate_tensions(&fv, &tv, &sv.r_p, p)?;
        let qv: [UnitVec; 3] = std::array::from_fn(|i| {
            desired_tether_direction(&muv.mu[i]).unwrap_or(fallback[i])
        });
        Ok((u1v, u2v, muv, qv))
    };
    let s1 = advance_design(s, &u1, &u2, g, delta);
    let (u1_1, u2_1, _, q_id1) = stage(&s1, &q_id)?;
    let s2 = advance_design(&s1, &u1_1, &u2_1, g, delta);
    let (_, _, _, q_id2) = stage(&s2, &q_id1)?;

    let rate_a: [Vec3; 3] = std::array::from_fn(|i| spherical_rate(&q_id[i], &q_id1[i], delta));
    let rate_b: [Vec3; 3] = std::array::from_fn(|i| spherical_rate(&q_id1[i], &q_id2[i], delta));
    let omega_id: [Vec3; 3] = std::array::from_fn(|i| guard_estimate(rate_a[i], DESIRED_RATE_MAX));
    let omegadot_id: [Vec3; 3] =
        std::array::from_fn(|i| guard_estimate((rate_b[i] - rate_a[i]) / delta, DESIRED_ACCEL_MAX));

    let u_perp = perpendicular_controls(s, &q_id, &omega_id, &omegadot_id, &u1, &u2, g, p);
    let u_cmd: [Vec3; 3] = std::array::from_fn(|i| u_par[i] + u_perp[i]);

    // Thrust directions for the attitude setpoints: first-order filtered,
    // falling back to the previous direction when the commanded magnitude is
    // too small to define one. A near-reversal is taken directly (the
    // feedforward guard zeroes the rate estimate for that tick).
    let dt_mem = prev.map(|snapshot| t - snapshot.t).unwrap_or(dt);
    let alpha_u = (-dt_mem / THRUST_DIR_FILTER_TAU).exp();
    let b3: [UnitVec; 3] = std::array::from_fn(|i| {
        let norm = u_cmd[i].norm();
        let raw = if norm > F_MIN {
            UnitVec::normalized(u_cmd[i])
        } else {
            match prev {
                Some(snapshot) => snapshot.b3[i],
                None => UnitVec::normalized(s.quads[i].r * Vec3::z()),
            }
        };
        match prev {
            Some(snapshot) => {
                let blend = snapshot.b3[i].as_vec() * alpha_u + raw.as_vec() * (1.0 - alpha_u);
                if blend.norm() < 1e-3 {
                    raw
                } else {
                    UnitVec::normalized(blend)
                }
            }
            None => raw,
        }
    });

    // Attitude setpoints with heading hysteresis: keep the previous heading
    // reference while valid, otherwise try e1 then e2. The setpoint aligns
    // the thrust axis with the filtered direction.
    let mut b1_used = [Vec3::x(); 3];
    let r_id: [Rotation; 3] = std::array::from_fn(|i| {
        let candidates = [
            prev.map(|snapshot| snapshot.b1[i]).unwrap_or_else(Vec3::x),
            Vec3::x(),
            Vec3::y(),
        ];
        for b1 in candidates {
            match quadrotor_attitude_setpoint(b3[i].as_vec(), &UnitVec::normalized(b1)) {
                Ok(r) => {
                    b1_used[i] = b1;
                    return r;
                }
                Err(ControlError::GimbalDegeneracy { .. }) => continue,
                Err(_) => break,
            }
        }
        match prev {
            Some(snapshot) => {
                b1_used[i] = snapshot.b1[i];
                snapshot.r_id[i]
            }
            None => s.quads[i].r,
        }
    });

    // Desired attitude rates by backward differences of the filtered
    // setpoints; safe because the filter bounds their angular motion.
    let omega_qid: [Vec3; 3] = std::array::from_fn(|i| match prev {
        Some(snapshot) => {
            let rel = snapshot.r_id[i].transpose() * r_id[i];
            guard_estimate(log_so3(&rel) / dt_mem, DESIRED_RATE_MAX)
        }
        None => Vec3::zeros(),
    });
    let omegadot_qid: [Vec3; 3] = std::array::from_fn(|i| match prev {
        Some(snapshot) => guard_estimate(
            (omega_qid[i] - snapshot.omega_qid[i]) / dt_mem,
            DESIRED_ACCEL_MAX,
        ),
        None => Vec3::zeros(),
    });

    let mut f = [0.0; 3];
    let mut moment = [Vec3::zeros(); 3];
    let mut e_r_norm = [0.0; 3];
    let mut e_omega_norm = [0.0; 3];
    let mut applied = [Vec3::zeros(); 3];
    for i in 0..3 {
        let (f_i, m_i) = quadrotor_inputs(
            &u_cmd[i],
            &s.quads[i].r,
            &s.quads[i].omega,
            &r_id[i],
            &omega_qid[i],
            &omegadot_qid[i],
            &p.quads[i].inertia,
            g,
        );
        f[i] = f_i;
        moment[i] = m_i;
        let (e_r, e_omega) =
            quad_attitude_errors(&s.quads[i].r, &s.quads[i].omega, &r_id[i], &omega_qid[i]);
        e_r_norm[i] = e_r.norm();
        e_omega_norm[i] = e_omega.norm();
        // The plant receives the thrust along the quadrotor's actual yaw axis.
        applied[i] = s.quads[i].r * Vec3::z() * f_i;
    }

    let trace = ControlTrace {
        u1,
        u2,
        force,
        torque,
        mu: tensions.mu,
        u_par,
        u_perp,
        u_cmd,
        q_id,
        omega_id,
        r_id,
        omega_qid,
        f,
        moment,
        e_r_norm,
        e_omega_norm,
    };
    let input = ControlInput {
        u: applied,
        m: moment,
    };
    let memory = ControllerMemory {
        prev: Some(MemorySnapshot {
            t,
            q_id,
            r_id,
            omega_qid,
            b1: b1_used,
            b3,
        }),
    };
    Ok((input, trace, memory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use crate::model::{decoupled_dynamics, decoupled_from_wrench, SystemState};
    use crate::sampling;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> SystemParams {
        SystemParams::symmetric_default()
    }

    #[test]
    fn gains_validate() {
        Gains::defaults().validate().unwrap();
        let mut g = Gains::defaults();
        g.k3 = 0.0;
        assert!(g.validate().is_err());
        let mut g = Gains::defaults();
        g.eps = 1.5;
        assert!(g.validate().is_err());
    }

    #[test]
    fn pfl_zero_at_target() {
        let (u1, u2) = pfl_inputs(&SystemState::rest(), &Gains::defaults(), &params());
        assert!(u1.norm() < 1e-14);
        assert!(u2.norm() < 1e-14);
    }

    #[test]
    fn pfl_spin_damping() {
        let g = Gains::defaults();
        let mut s = SystemState::rest();
        s.omega_p = Vec3::z();
        let (_, u2) = pfl_inputs(&s, &g, &params());
        assert_relative_eq!(u2, Vec3::new(0.0, 0.0, -g.k1), epsilon = 1e-14);
    }

    #[test]
    fn pfl_ball_offset() {
        let g = Gains::defaults();
        let mut s = SystemState::rest();
        s.r_b = Vec2::new(0.1, 0.0);
        let (u1, _) = pfl_inputs(&s, &g, &params());
        assert_relative_eq!(u1, Vec3::new(0.1 * g.k4, 0.0, 0.0), epsilon = 1e-14);
    }

    #[test]
    fn force_torque_gravity_feedforward() {
        let p = params();
        let (force, torque) =
            force_torque_from_u(&SystemState::rest(), &Vec3::zeros(), &Vec3::zeros(), &p);
        assert_relative_eq!(
            force,
            Vec3::new(0.0, 0.0, (p.m_p + p.m_b) * p.gravity),
            epsilon = 1e-12
        );
        assert!(torque.norm() < 1e-12);
    }

    #[test]
    fn pfl_consistency_roundtrip() {
        // The linearizing wrench makes the decoupled dynamics return exactly
        // the virtual inputs.
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let s = sampling::random_state(&mut rng, 1.5);
            let u1 = sampling::random_vec3(&mut rng, 5.0);
            let u2 = sampling::random_vec3(&mut rng, 5.0);
            let (force, torque) = force_torque_from_u(&s, &u1, &u2, &p);
            let (rddot, oddot, omegadot) = decoupled_from_wrench(&s, &force, &torque, &p).unwrap();
            assert!((oddot - u1).norm() < 1e-8, "oddot error {}", (oddot - u1).norm());
            assert!((omegadot - u2).norm() < 1e-8);
            // Partially linearized ball equation.
            let (n1, _) = bias_terms(&s, &p);
            let e = embedding();
            let c_hat = hat_mat(&(e * s.r_b));
            let expected = -n1 / p.m_b
                - e.transpose() * (s.r_p.matrix().transpose() * u1)
                + e.transpose() * (c_hat * u2);
            assert!((rddot - expected).norm() < 1e-8);
        }
    }

    #[test]
    fn schur_complement_positive_definite() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let s = sampling::random_state(&mut rng, 2.0);
            let blocks = mass_blocks(&s, &p);
            let schur = blocks.m22 - blocks.m12.transpose() * blocks.m12 / p.m_b;
            let eig = schur.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "Schur complement not PD: {eig:?}");
        }
    }

    #[test]
    fn closed_loop_ball_equation() {
        // Under the pipeline's own (U1, U2), the ball obeys
        // rddot_b = -k4 r_b - k3 rdot_b + E^T [Er_b]^ U2.
        let p = params();
        let g = Gains::defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let s = sampling::random_state(&mut rng, 1.5);
            let (u1, u2) = pfl_inputs(&s, &g, &p);
            let (force, torque) = force_torque_from_u(&s, &u1, &u2, &p);
            let (rddot, _, _) = decoupled_from_wrench(&s, &force, &torque, &p).unwrap();
            let e = embedding();
            let expected = -s.r_b * g.k4 - s.rdot_b * g.k3
                + e.transpose() * (hat_mat(&(e * s.r_b)) * u2);
            assert!((rddot - expected).norm() < 1e-8);
        }
    }

    #[test]
    fn allocation_symmetric_hover() {
        let p = params();
        let mu = allocate_tensions(&(Vec3::z() * 3.0), &Vec3::zeros(), &Rotation::identity(), &p)
            .unwrap();
        for i in 0..3 {
            assert_relative_eq!(mu.mu[i], Vec3::z(), epsilon = 1e-10);
        }
    }

    #[test]
    fn allocation_reconstruction() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let r_p = sampling::random_rotation(&mut rng);
            let force = sampling::random_vec3(&mut rng, 20.0);
            let torque = sampling::random_vec3(&mut rng, 5.0);
            let mu = allocate_tensions(&force, &torque, &r_p, &p).unwrap();
            let sum: Vec3 = mu.mu.iter().sum();
            let tau: Vec3 = (0..3)
                .map(|i| p.quads[i].attach.cross(&(r_p.transpose() * mu.mu[i])))
                .sum();
            assert!((sum - force).norm() < 1e-10, "force error {}", (sum - force).norm());
            assert!((tau - torque).norm() < 1e-10);
        }
    }

    #[test]
    fn allocation_minimum_norm() {
        // Any null-space perturbation strictly increases the stacked norm.
        let p = params();
        let a = p.attachment_matrix();
        let gram_inv = (a * a.transpose()).try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..100 {
            let r_p = sampling::random_rotation(&mut rng);
            let force = sampling::random_vec3(&mut rng, 20.0);
            let torque = sampling::random_vec3(&mut rng, 5.0);
            let mu = allocate_tensions(&force, &torque, &r_p, &p).unwrap();
            let mut stacked = crate::model::Vec9::zeros();
            for i in 0..3 {
                stacked
                    .fixed_rows_mut::<3>(3 * i)
                    .copy_from(&(r_p.transpose() * mu.mu[i]));
            }
            let base = stacked.norm_squared();
            for _ in 0..20 {
                let raw = crate::model::Vec9::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let delta = raw - a.transpose() * (gram_inv * (a * raw));
                if delta.norm() < 1e-9 {
                    continue;
                }
                assert!((a * delta).norm() < 1e-9);
                assert!((stacked + delta).norm_squared() > base);
            }
        }
    }

    #[test]
    fn parallel_controls_hover() {
        let p = params();
        let s = SystemState::rest();
        let share = (p.m_p + p.m_b) * p.gravity / 3.0;
        let mu = TensionSet {
            mu: [Vec3::z() * share; 3],
        };
        let u_par = parallel_controls(&s, &mu, &Vec3::zeros(), &Vec3::zeros(), &p);
        for i in 0..3 {
            assert_relative_eq!(
                u_par[i],
                Vec3::z() * (share + p.quads[i].mass * p.gravity),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn parallel_controls_self_support() {
        let p = params();
        let s = SystemState::rest();
        let mu = TensionSet {
            mu: [Vec3::zeros(); 3],
        };
        let u_par = parallel_controls(&s, &mu, &Vec3::zeros(), &Vec3::zeros(), &p);
        for i in 0..3 {
            assert_relative_eq!(u_par[i], Vec3::z() * (p.quads[i].mass * p.gravity), epsilon = 1e-12);
        }
    }

    #[test]
    fn parallel_controls_centripetal() {
        let p = params();
        let mut s = SystemState::rest();
        s.tethers[0].omega = Vec3::x();
        let mu = TensionSet {
            mu: [Vec3::zeros(); 3],
        };
        let u_par = parallel_controls(&s, &mu, &Vec3::zeros(), &Vec3::zeros(), &p);
        let expected = p.quads[0].mass * (p.gravity - p.quads[0].cable_length);
        assert_relative_eq!(u_par[0], Vec3::z() * expected, epsilon = 1e-12);
    }

    #[test]
    fn parallel_controls_stay_parallel() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..300 {
            let s = sampling::random_state(&mut rng, 1.5);
            let force = sampling::random_vec3(&mut rng, 20.0);
            let torque = sampling::random_vec3(&mut rng, 5.0);
            let mu = allocate_tensions(&force, &torque, &s.r_p, &p).unwrap();
            let u1 = sampling::random_vec3(&mut rng, 3.0);
            let u2 = sampling::random_vec3(&mut rng, 3.0);
            let u_par = parallel_controls(&s, &mu, &u1, &u2, &p);
            for i in 0..3 {
                let q = s.tethers[i].q.as_vec();
                let off = u_par[i] - q * q.dot(&u_par[i]);
                assert!(off.norm() <= tol::DECOMPOSITION * u_par[i].norm().max(1.0));
            }
        }
    }

    #[test]
    fn desired_direction_examples() {
        let d = desired_tether_direction(&Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(*d.as_vec(), Vec3::z());
        let d = desired_tether_direction(&Vec3::new(3.0, 0.0, 4.0)).unwrap();
        assert_relative_eq!(*d.as_vec(), Vec3::new(0.6, 0.0, 0.8), epsilon = 1e-15);
        assert!(matches!(
            desired_tether_direction(&Vec3::new(0.0, 0.0, 1e-12)),
            Err(ControlError::DegenerateTension { .. })
        ));
    }

    #[test]
    fn perpendicular_zero_when_aligned() {
        // q = q_id = e3 with a parallel to q: the projector annihilates a and
        // every feedback term vanishes.
        let p = params();
        let s = SystemState::rest();
        let g = Gains::defaults();
        let q_id = [UnitVec::e3(); 3];
        let zero = [Vec3::zeros(); 3];
        let u_perp =
            perpendicular_controls(&s, &q_id, &zero, &zero, &Vec3::zeros(), &Vec3::zeros(), &g, &p);
        for i in 0..3 {
            assert!(u_perp[i].norm() < 1e-14);
        }
    }

    #[test]
    fn perpendicular_orthogonal_to_tether() {
        let p = params();
        let g = Gains::defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..300 {
            let s = sampling::random_state(&mut rng, 1.5);
            let q_id = std::array::from_fn(|_| sampling::random_unit(&mut rng));
            let omega_id = std::array::from_fn(|_| sampling::random_vec3(&mut rng, 2.0));
            let omegadot_id = std::array::from_fn(|_| sampling::random_vec3(&mut rng, 2.0));
            let u1 = sampling::random_vec3(&mut rng, 3.0);
            let u2 = sampling::random_vec3(&mut rng, 3.0);
            let u_perp =
                perpendicular_controls(&s, &q_id, &omega_id, &omegadot_id, &u1, &u2, &g, &p);
            for i in 0..3 {
                let along = u_perp[i].dot(s.tethers[i].q.as_vec()).abs();
                assert!(along <= tol::DECOMPOSITION * u_perp[i].norm().max(1.0));
            }
        }
    }

    #[test]
    fn perpendicular_pure_alignment_error() {
        // q = e3, q_id = e1, no rates, a = 0: u_perp = m l k7 e1 minus the
        // (zero) transport terms.
        let p = params();
        let mut g = Gains::defaults();
        g.k7 = 16.0;
        let mut s = SystemState::rest();
        // Cancel a_i = g e3 by overriding gravity for this algebraic check.
        let mut p0 = p.clone();
        p0.gravity = 0.0;
        s.tethers[0].q = UnitVec::e3();
        let mut q_id = [UnitVec::e3(); 3];
        q_id[0] = UnitVec::new(Vec3::x()).unwrap();
        let zero = [Vec3::zeros(); 3];
        let u_perp = perpendicular_controls(
            &s, &q_id, &zero, &zero, &Vec3::zeros(), &Vec3::zeros(), &g, &p0,
        );
        let expected = p0.quads[0].mass * p0.quads[0].cable_length * g.k7;
        assert_relative_eq!(u_perp[0], Vec3::x() * expected, epsilon = 1e-12);
    }

    #[test]
    fn setpoint_identity_for_vertical_thrust() {
        let r = quadrotor_attitude_setpoint(&Vec3::new(0.0, 0.0, 9.81), &UnitVec::new(Vec3::x()).unwrap())
            .unwrap();
        assert_relative_eq!(*r.matrix(), crate::geom::Mat3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn setpoint_inverted_thrust_is_still_a_rotation() {
        let r = quadrotor_attitude_setpoint(
            &Vec3::new(0.0, 0.0, -9.81),
            &UnitVec::new(Vec3::x()).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(r.matrix().column(2).into_owned(), -Vec3::z(), epsilon = 1e-14);
        assert!(r.ortho_residual() < 1e-12);
        assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn setpoint_degeneracies() {
        assert!(matches!(
            quadrotor_attitude_setpoint(&(Vec3::x() * 5.0), &UnitVec::new(Vec3::x()).unwrap()),
            Err(ControlError::GimbalDegeneracy { .. })
        ));
        assert!(matches!(
            quadrotor_attitude_setpoint(&(Vec3::z() * 1e-9), &UnitVec::new(Vec3::x()).unwrap()),
            Err(ControlError::DegenerateThrust { .. })
        ));
    }

    #[test]
    fn setpoint_third_column_is_thrust_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let u = sampling::random_vec3(&mut rng, 20.0);
            if u.norm() < 1e-3 {
                continue;
            }
            let b1 = UnitVec::new(Vec3::x()).unwrap();
            match quadrotor_attitude_setpoint(&u, &b1) {
                Ok(r) => {
                    assert!(r.ortho_residual() < 1e-12);
                    assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
                    assert_relative_eq!(
                        r.matrix().column(2).into_owned(),
                        u.normalize(),
                        epsilon = 1e-12
                    );
                }
                Err(ControlError::GimbalDegeneracy { .. }) => {}
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn quadrotor_moment_zero_at_tracking() {
        let g = Gains::defaults();
        let p = params();
        let r = exp_so3(&Vec3::new(0.2, -0.4, 0.8));
        let (_, m) = quadrotor_inputs(
            &(Vec3::z() * 9.0),
            &r,
            &Vec3::zeros(),
            &r,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &p.quads[0].inertia,
            &g,
        );
        assert!(m.norm() < 1e-14);
    }

    #[test]
    fn quadrotor_moment_yaw_damping() {
        let g = Gains::defaults();
        let p = params();
        let (_, m) = quadrotor_inputs(
            &(Vec3::z() * 9.0),
            &Rotation::identity(),
            &Vec3::z(),
            &Rotation::identity(),
            &Vec3::zeros(),
            &Vec3::zeros(),
            &p.quads[0].inertia,
            &g,
        );
        assert_relative_eq!(m, Vec3::new(0.0, 0.0, -g.k_omega / g.eps), epsilon = 1e-14);
    }

    #[test]
    fn quadrotor_moment_eps_scaling() {
        // Halving eps quadruples the attitude gain and doubles the rate gain.
        let p = params();
        let mut g = Gains::defaults();
        let r_i = exp_so3(&Vec3::new(0.3, 0.0, 0.0));
        let run = |g: &Gains| {
            quadrotor_inputs(
                &(Vec3::z() * 9.0),
                &r_i,
                &Vec3::new(0.0, 0.5, 0.0),
                &Rotation::identity(),
                &Vec3::zeros(),
                &Vec3::zeros(),
                &p.quads[0].inertia,
                g,
            )
            .1
        };
        let m1 = run(&g);
        g.eps /= 2.0;
        let m2 = run(&g);
        // Separate the e_R and e_Omega channels: e_R is along e1, e_Omega along e2.
        assert_relative_eq!(m2[0], 4.0 * m1[0], epsilon = 1e-12);
        assert_relative_eq!(m2[1], 2.0 * m1[1], epsilon = 1e-12);
    }

    #[test]
    fn compute_controls_hover() {
        let p = params();
        let g = Gains::defaults();
        let s = SystemState::rest();
        let (input, trace, mem) =
            compute_controls(&s, &g, &ControllerMemory::new(), &p, 0.0, 1e-3).unwrap();
        assert!(trace.u1.norm() < 1e-12);
        assert!(trace.u2.norm() < 1e-12);
        for i in 0..3 {
            assert!(trace.f[i] > 0.0);
            assert!(trace.moment[i].norm() < 1e-10);
            assert!((input.u[i] - trace.u_cmd[i]).norm() < 1e-10);
        }
        // Second tick from the same state: finite differences stay finite,
        // setpoints unchanged.
        let (_, trace2, _) = compute_controls(&s, &g, &mem, &p, 1e-3, 1e-3).unwrap();
        for i in 0..3 {
            assert!(trace2.omega_id[i].norm() < 1e-9);
            assert!(trace2.omega_qid[i].norm() < 1e-9);
        }
    }

    #[test]
    fn trace_identities() {
        let p = params();
        let g = Gains::defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut mem = ControllerMemory::new();
        for k in 0..100 {
            let s = sampling::random_state(&mut rng, 1.0);
            let (_, trace, new_mem) =
                compute_controls(&s, &g, &mem, &p, k as f64 * 1e-3, 1e-3).unwrap();
            mem = new_mem;
            for i in 0..3 {
                // Exact decomposition and exact thrust magnitude.
                assert_eq!(trace.u_cmd[i], trace.u_par[i] + trace.u_perp[i]);
                assert_eq!(trace.f[i], trace.u_cmd[i].norm());
                // Setpoint validity.
                assert!(trace.r_id[i].ortho_residual() < 1e-9);
                // Decomposition orthogonal / parallel to the tether.
                let q = s.tethers[i].q.as_vec();
                assert!(
                    trace.u_perp[i].dot(q).abs()
                        <= tol::DECOMPOSITION * trace.u_perp[i].norm().max(1.0)
                );
                let off = trace.u_par[i] - q * q.dot(&trace.u_par[i]);
                assert!(off.norm() <= tol::DECOMPOSITION * trace.u_par[i].norm().max(1.0));
            }
        }
    }

    #[test]
    fn pipeline_consistent_with_decoupled_model() {
        // Feeding the pipeline's tensions into the decoupled dynamics
        // reproduces (U1, U2) when the tethers are aligned with their
        // targets, and the ball follows its closed-loop equation.
        let p = params();
        let g = Gains::defaults();
        let s = SystemState::rest();
        let (_, trace, _) =
            compute_controls(&s, &g, &ControllerMemory::new(), &p, 0.0, 1e-3).unwrap();
        let (rddot, oddot, omegadot) =
            decoupled_dynamics(&s, &TensionSet { mu: trace.mu }, &p).unwrap();
        assert!((oddot - trace.u1).norm() < 1e-9);
        assert!((omegadot - trace.u2).norm() < 1e-9);
        assert!(rddot.norm() < 1e-9);
    }
}
