//! System parameters, state, energies, and the equations of motion.
//!
//! Two routes to the ball/plate accelerations are implemented and must agree:
//!
//! * [`full_dynamics`] assembles the coupled plate-translation, ball, and
//!   plate-orientation equations (tether accelerations already eliminated)
//!   into an 8x8 linear system in `(rddot_b, oddot_p, omegadot_p)`, solves
//!   it, then recovers the tether and quadrotor angular accelerations
//!   explicitly.
//! * [`decoupled_dynamics`] treats the tether tensions as the interface force
//!   and solves the ball-and-plate subsystem from its Riemannian metric
//!   blocks and bias terms.
//!
//! The coefficient matrix of the full system is built column-by-column by
//! evaluating the equations on unit accelerations with the rest zeroed, and
//! the constant vector with all accelerations zero. This keeps the code in
//! one-to-one correspondence with the printed equations instead of a
//! hand-expanded mass matrix.

use nalgebra::{Matrix2, Matrix3x2, SMatrix, SVector};
use thiserror::Error;

use crate::geom::{hat_mat, tol, Mat3, Rotation, UnitVec, Vec2, Vec3};

pub type Mat2 = Matrix2<f64>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Vec6 = SVector<f64, 6>;
pub type Vec8 = SVector<f64, 8>;
pub type Mat2x6 = SMatrix<f64, 2, 6>;
pub type Mat6x9 = SMatrix<f64, 6, 9>;
pub type Vec9 = SVector<f64, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("mass matrix is ill-conditioned (condition number {cond:.3e}); degenerate parameters")]
    SingularMassMatrix { cond: f64 },
    #[error("tether {index}: parallel control is not aligned with q (residual {residual:.3e})")]
    NonParallelInput { index: usize, residual: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// The fixed 3x2 embedding of the plate plane into R^3,
/// `E = [e1 e2]`, so `E r_b` is the ball offset in the plate frame.
pub fn embedding() -> Matrix3x2<f64> {
    Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Per-quadrotor parameters: mass, inertia, cable length, and the attachment
/// point of its cable in the plate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub cable_length: f64,
    pub attach: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub m_p: f64,
    pub m_b: f64,
    pub j_p: Mat3,
    pub quads: [QuadrotorParams; 3],
    pub gravity: f64,
}

impl SystemParams {
    /// Symmetric configuration: identical quadrotors, attachment points at
    /// radius 0.5 m and bearings 90, 210, 330 degrees in the plate plane.
    pub fn symmetric_default() -> Self {
        let attach = |deg: f64| {
            let rad = deg.to_radians();
            Vec3::new(0.5 * rad.cos(), 0.5 * rad.sin(), 0.0)
        };
        let quad = |deg: f64| QuadrotorParams {
            mass: 0.85,
            inertia: Mat3::from_diagonal(&Vec3::new(0.0049, 0.0049, 0.0088)),
            cable_length: 1.0,
            attach: attach(deg),
        };
        SystemParams {
            m_p: 0.75,
            m_b: 0.1,
            j_p: Mat3::from_diagonal(&Vec3::new(0.006, 0.008, 0.012)),
            quads: [quad(90.0), quad(210.0), quad(330.0)],
            gravity: 9.81,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.m_p + self.m_b + self.quads.iter().map(|q| q.mass).sum::<f64>()
    }

    /// The 6x9 attachment matrix `A = [I I I; hat(x1) hat(x2) hat(x3)]`
    /// mapping stacked plate-frame tensions to the plate-frame wrench.
    pub fn attachment_matrix(&self) -> Mat6x9 {
        let mut a = Mat6x9::zeros();
        for (i, q) in self.quads.iter().enumerate() {
            a.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&Mat3::identity());
            a.fixed_view_mut::<3, 3>(3, 3 * i).copy_from(&hat_mat(&q.attach));
        }
        a
    }

    /// Rejects degenerate parameters: non-positive masses or lengths,
    /// non-symmetric or non-positive-definite inertias, and attachment points
    /// failing the rank-6 condition on the attachment matrix.
    pub fn validate(&self) -> Result<(), ModelError> {
        let spd = |j: &Mat3, name: &str| -> Result<(), ModelError> {
            if (j - j.transpose()).norm() > 1e-12 * j.norm().max(1.0) {
                return Err(ModelError::InvalidParams(format!("{name} is not symmetric")));
            }
            let eig = j.symmetric_eigenvalues();
            if eig.min() <= 0.0 {
                return Err(ModelError::InvalidParams(format!(
                    "{name} is not positive definite (min eigenvalue {})",
                    eig.min()
                )));
            }
            Ok(())
        };
        if self.m_p <= 0.0 || self.m_b <= 0.0 {
            return Err(ModelError::InvalidParams("masses must be positive".into()));
        }
        spd(&self.j_p, "plate inertia")?;
        for (i, q) in self.quads.iter().enumerate() {
            if q.mass <= 0.0 {
                return Err(ModelError::InvalidParams(format!(
                    "quadrotor {i} mass must be positive"
                )));
            }
            if q.cable_length <= 0.0 {
                return Err(ModelError::InvalidParams(format!(
                    "cable {i} length must be positive"
                )));
            }
            spd(&q.inertia, &format!("quadrotor {i} inertia"))?;
        }
        if self.gravity < 0.0 {
            return Err(ModelError::InvalidParams("gravity must be non-negative".into()));
        }
        let a = self.attachment_matrix();
        let gram = a * a.transpose();
        let sv = gram.svd(false, false).singular_values;
        let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
        if !cond.is_finite() || cond > tol::MAX_CONDITION {
            return Err(ModelError::InvalidParams(format!(
                "attachment points violate the rank condition: [I I I; x1^ x2^ x3^] \
                 must have rank 6 (points coplanar, not collinear); condition number {cond:.3e}"
            )));
        }
        Ok(())
    }
}

/// Direction and angular velocity of one tether. The direction is a unit
/// vector in the inertial frame; the angular velocity has no component along
/// the tether (`omega . q = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TetherState {
    pub q: UnitVec,
    pub omega: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub r: Rotation,
    pub omega: Vec3,
}

/// Full configuration and velocity of the assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub o_p: Vec3,
    pub v_p: Vec3,
    pub r_p: Rotation,
    pub omega_p: Vec3,
    pub r_b: Vec2,
    pub rdot_b: Vec2,
    pub tethers: [TetherState; 3],
    pub quads: [QuadrotorState; 3],
}

impl SystemState {
    /// An assembly at rest: plate level at the origin, ball centered,
    /// tethers vertical, quadrotor attitudes aligned with the inertial frame.
    pub fn rest() -> Self {
        SystemState {
            o_p: Vec3::zeros(),
            v_p: Vec3::zeros(),
            r_p: Rotation::identity(),
            omega_p: Vec3::zeros(),
            r_b: Vec2::zeros(),
            rdot_b: Vec2::zeros(),
            tethers: std::array::from_fn(|_| TetherState {
                q: UnitVec::e3(),
                omega: Vec3::zeros(),
            }),
            quads: std::array::from_fn(|_| QuadrotorState {
                r: Rotation::identity(),
                omega: Vec3::zeros(),
            }),
        }
    }

    pub fn validate(&self, tolerance: f64) -> Result<(), ModelError> {
        let finite = self.o_p.iter().all(|x| x.is_finite())
            && self.v_p.iter().all(|x| x.is_finite())
            && self.omega_p.iter().all(|x| x.is_finite());
        if !finite {
            return Err(ModelError::InvalidState("non-finite component".into()));
        }
        if self.r_p.ortho_residual() > tolerance {
            return Err(ModelError::InvalidState(format!(
                "plate rotation residual {:.3e}",
                self.r_p.ortho_residual()
            )));
        }
        for (i, t) in self.tethers.iter().enumerate() {
            let unit_res = (t.q.as_vec().norm() - 1.0).abs();
            if unit_res > tolerance {
                return Err(ModelError::InvalidState(format!(
                    "tether {i}: |q| deviates from 1 by {unit_res:.3e}"
                )));
            }
            let orth = t.omega.dot(t.q.as_vec()).abs();
            if orth > tolerance {
                return Err(ModelError::InvalidState(format!(
                    "tether {i}: omega . q = {orth:.3e}"
                )));
            }
        }
        for (i, q) in self.quads.iter().enumerate() {
            if q.r.ortho_residual() > tolerance {
                return Err(ModelError::InvalidState(format!(
                    "quadrotor {i} rotation residual {:.3e}",
                    q.r.ortho_residual()
                )));
            }
        }
        Ok(())
    }

    /// Projects back onto the constraint manifold: renormalizes tether
    /// directions, removes tether-rate components along the tether, and
    /// re-orthonormalizes the rotation matrices.
    pub fn project(&mut self) {
        self.r_p.reorthonormalize();
        for t in &mut self.tethers {
            let q = UnitVec::normalized(*t.q.as_vec());
            t.omega -= q.as_vec() * t.omega.dot(q.as_vec());
            t.q = q;
        }
        for q in &mut self.quads {
            q.r.reorthonormalize();
        }
    }

    /// Largest absolute value over all state components.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        let mut acc = |v: &Vec3| m = m.max(v.amax());
        acc(&self.o_p);
        acc(&self.v_p);
        acc(&self.omega_p);
        m = m.max(self.r_b.amax()).max(self.rdot_b.amax());
        for t in &self.tethers {
            m = m.max(t.omega.amax());
        }
        for q in &self.quads {
            m = m.max(q.omega.amax());
        }
        m
    }

    /// Inertial velocity of quadrotor `i`:
    /// `v_p + R_p (Omega_p x x_i) + l_i (omega_i x q_i)`.
    pub fn quad_velocity(&self, i: usize, p: &SystemParams) -> Vec3 {
        let t = &self.tethers[i];
        self.v_p
            + self.r_p * self.omega_p.cross(&p.quads[i].attach)
            + t.omega.cross(t.q.as_vec()) * p.quads[i].cable_length
    }
}

/// Accelerations of every configuration variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accelerations {
    pub rddot_b: Vec2,
    pub oddot_p: Vec3,
    pub omegadot_p: Vec3,
    pub omegadot_t: [Vec3; 3],
    pub omegadot_q: [Vec3; 3],
}

/// Spatial thrust vectors and body moments of the three quadrotors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub u: [Vec3; 3],
    pub m: [Vec3; 3],
}

impl ControlInput {
    pub fn zero() -> Self {
        ControlInput {
            u: [Vec3::zeros(); 3],
            m: [Vec3::zeros(); 3],
        }
    }
}

/// Tension vectors carried by the three tethers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensionSet {
    pub mu: [Vec3; 3],
}

/// Kinetic energy of plate, quadrotors (translational and rotational), and ball.
pub fn kinetic_energy(s: &SystemState, p: &SystemParams) -> f64 {
    let mut t = 0.5 * p.m_p * s.v_p.norm_squared() + 0.5 * s.omega_p.dot(&(p.j_p * s.omega_p));
    for i in 0..3 {
        let v_quad = s.quad_velocity(i, p);
        t += 0.5 * p.quads[i].mass * v_quad.norm_squared();
        t += 0.5 * s.quads[i].omega.dot(&(p.quads[i].inertia * s.quads[i].omega));
    }
    let e = embedding();
    let v_ball = s.v_p + s.r_p * (s.omega_p.cross(&(e * s.r_b))) + s.r_p * (e * s.rdot_b);
    t + 0.5 * p.m_b * v_ball.norm_squared()
}

/// Gravitational potential energy of all bodies, zero at the inertial origin.
pub fn potential_energy(s: &SystemState, p: &SystemParams) -> f64 {
    let e3 = Vec3::z();
    let (o_b, o_quads) = body_positions(s, p);
    let mut u = p.m_p * p.gravity * e3.dot(&s.o_p) + p.m_b * p.gravity * e3.dot(&o_b);
    for i in 0..3 {
        u += p.quads[i].mass * p.gravity * e3.dot(&o_quads[i]);
    }
    u
}

/// Inertial positions of the ball and the three quadrotors.
pub fn body_positions(s: &SystemState, p: &SystemParams) -> (Vec3, [Vec3; 3]) {
    let o_b = s.o_p + s.r_p * (embedding() * s.r_b);
    let o_quads = std::array::from_fn(|i| {
        s.o_p + s.r_p * p.quads[i].attach + s.tethers[i].q.as_vec() * p.quads[i].cable_length
    });
    (o_b, o_quads)
}

/// Blocks of the ball-and-plate Riemannian metric, ordered
/// `(r_b, [o_p; Omega_p])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassBlocks {
    pub m11: Mat2,
    pub m12: Mat2x6,
    pub m22: Mat6,
}

impl MassBlocks {
    /// The assembled symmetric 8x8 metric `[[M11, M12], [M12^T, M22]]`.
    pub fn assembled(&self) -> Mat8 {
        let mut m = Mat8::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.m11);
        m.fixed_view_mut::<2, 6>(0, 2).copy_from(&self.m12);
        m.fixed_view_mut::<6, 2>(2, 0).copy_from(&self.m12.transpose());
        m.fixed_view_mut::<6, 6>(2, 2).copy_from(&self.m22);
        m
    }
}

pub fn mass_blocks(s: &SystemState, p: &SystemParams) -> MassBlocks {
    let e = embedding();
    let r_p = s.r_p.matrix();
    let c_hat = hat_mat(&(e * s.r_b));

    let m11 = Mat2::identity() * p.m_b;

    let mut m12 = Mat2x6::zeros();
    m12.fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(e.transpose() * r_p.transpose() * p.m_b));
    m12.fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(e.transpose() * c_hat * (-p.m_b)));

    let mut m22 = Mat6::zeros();
    m22.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Mat3::identity() * (p.m_p + p.m_b)));
    m22.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(r_p * c_hat * (-p.m_b)));
    m22.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(c_hat * r_p.transpose() * p.m_b));
    m22.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(p.j_p - c_hat * c_hat * p.m_b));

    MassBlocks { m11, m12, m22 }
}

/// Velocity- and gravity-dependent bias of the ball-and-plate equations,
/// `(N1, N2)` with the metric ordering of [`mass_blocks`].
pub fn bias_terms(s: &SystemState, p: &SystemParams) -> (Vec2, Vec6) {
    let e = embedding();
    let e3 = Vec3::z();
    let r_p = s.r_p.matrix();
    let c = e * s.r_b;
    let c_hat = hat_mat(&c);
    let om_hat = hat_mat(&s.omega_p);
    let g_body = r_p.transpose() * e3 * p.gravity;

    // Common bracket: Omega^2 E r_b + 2 Omega E rdot_b + R^T g e3.
    let bracket = om_hat * om_hat * c + om_hat * (e * s.rdot_b) * 2.0 + g_body;

    let n1 = e.transpose() * bracket * p.m_b;

    let mut n2 = Vec6::zeros();
    let trans = e3 * ((p.m_p + p.m_b) * p.gravity)
        + s.r_p * (om_hat * om_hat * c + om_hat * (e * s.rdot_b) * 2.0) * p.m_b;
    let rot = s.omega_p.cross(&(p.j_p * s.omega_p)) + c_hat * bracket * p.m_b;
    n2.fixed_rows_mut::<3>(0).copy_from(&trans);
    n2.fixed_rows_mut::<3>(3).copy_from(&rot);
    (n1, n2)
}

/// Solves an 8x8 system with a conditioning check.
fn solve8(m: &Mat8, rhs: &Vec8) -> Result<Vec8, ModelError> {
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if !cond.is_finite() || cond > tol::MAX_CONDITION {
        return Err(ModelError::SingularMassMatrix { cond });
    }
    svd.solve(rhs, 0.0)
        .map_err(|_| ModelError::SingularMassMatrix { cond })
}

/// Evaluates the left-minus-right sides of the coupled plate-translation,
/// ball, and plate-orientation equations at the given candidate
/// accelerations. Linear in `acc`; zero at the true accelerations.
fn coupled_residual(s: &SystemState, u: &ControlInput, p: &SystemParams, acc: &Vec8) -> Vec8 {
    let e = embedding();
    let e3 = Vec3::z();
    let r_p = s.r_p.matrix();
    let c = e * s.r_b;
    let c_hat = hat_mat(&c);
    let om_hat = hat_mat(&s.omega_p);
    let om_hat2 = om_hat * om_hat;
    let g = p.gravity;

    let rddot_b = Vec2::new(acc[0], acc[1]);
    let oddot_p = Vec3::new(acc[2], acc[3], acc[4]);
    let omegadot_p = Vec3::new(acc[5], acc[6], acc[7]);

    // Ball bracket shared by the ball and orientation equations:
    // R^T oddot + Omega^2 E r_b - [Er_b]^ Omegadot + 2 Omega E rdot_b
    //   + E rddot_b + R^T g e3
    let ball_inner = r_p.transpose() * oddot_p + om_hat2 * c - c_hat * omegadot_p
        + om_hat * (e * s.rdot_b) * 2.0
        + e * rddot_b
        + r_p.transpose() * e3 * g;

    // Plate translation.
    let mut trans = (oddot_p + e3 * g) * p.m_p
        + (oddot_p + s.r_p * (om_hat2 * c) - s.r_p * (c_hat * omegadot_p)
            + s.r_p * (om_hat * (e * s.rdot_b)) * 2.0
            + s.r_p * (e * rddot_b)
            + e3 * g)
            * p.m_b;
    for i in 0..3 {
        let q = s.tethers[i].q.as_vec();
        let omega = s.tethers[i].omega;
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        let bracket = oddot_p + e3 * g + s.r_p * (om_hat2 * x_i)
            - s.r_p * (hat_mat(&x_i) * omegadot_p)
            - q * (l_i * omega.norm_squared());
        trans += q * (q.dot(&bracket)) * m_i;
        trans -= q * q.dot(&u.u[i]);
    }

    // Ball.
    let ball = e.transpose() * ball_inner * p.m_b;

    // Plate orientation.
    let mut rot = p.j_p * omegadot_p + s.omega_p.cross(&(p.j_p * s.omega_p))
        + c_hat * ball_inner * p.m_b;
    for i in 0..3 {
        let q = s.tethers[i].q.as_vec();
        let omega = s.tethers[i].omega;
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        let x_hat = hat_mat(&x_i);
        let q_body = r_p.transpose() * q;
        // -(sum m_i x^ R^T q q^T R x^) Omegadot folded in with the J_p term.
        rot -= x_hat * q_body * (q_body.dot(&(x_hat * omegadot_p))) * m_i;
        let bracket = oddot_p + e3 * g - q * (l_i * omega.norm_squared());
        rot += x_hat * q_body * (q.dot(&bracket)) * m_i;
        rot -= x_hat * q_body * q.dot(&(u.u[i] - s.r_p * (om_hat2 * x_i) * m_i));
    }

    let mut res = Vec8::zeros();
    res.fixed_rows_mut::<3>(0).copy_from(&trans);
    res.fixed_rows_mut::<2>(3).copy_from(&ball);
    res.fixed_rows_mut::<3>(5).copy_from(&rot);
    res
}

/// Tether angular acceleration recovered from the tether equation:
/// `omegadot_i = (1/l_i) q_i^ [(u_i - m_i g e3)/m_i - oddot_p
///   - R Omega^2 x_i + R x_i^ Omegadot_p]`.
fn tether_angular_accel(
    s: &SystemState,
    u_i: &Vec3,
    p: &SystemParams,
    i: usize,
    oddot_p: &Vec3,
    omegadot_p: &Vec3,
) -> Vec3 {
    let e3 = Vec3::z();
    let q = s.tethers[i].q.as_vec();
    let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
    let om_hat = hat_mat(&s.omega_p);
    let v = (u_i - e3 * (m_i * p.gravity)) / m_i
        - oddot_p
        - s.r_p * (om_hat * om_hat * x_i)
        + s.r_p * (hat_mat(&x_i) * omegadot_p);
    q.cross(&v) / l_i
}

/// Full coupled dynamics: accelerations of every configuration variable
/// under the given spatial thrusts and body moments.
pub fn full_dynamics(
    s: &SystemState,
    u: &ControlInput,
    p: &SystemParams,
) -> Result<Accelerations, ModelError> {
    let constant = coupled_residual(s, u, p, &Vec8::zeros());
    let mut coeff = Mat8::zeros();
    for j in 0..8 {
        let mut basis = Vec8::zeros();
        basis[j] = 1.0;
        coeff.set_column(j, &(coupled_residual(s, u, p, &basis) - constant));
    }
    let acc = solve8(&coeff, &(-constant))?;

    let oddot_p = Vec3::new(acc[2], acc[3], acc[4]);
    let omegadot_p = Vec3::new(acc[5], acc[6], acc[7]);
    let omegadot_t =
        std::array::from_fn(|i| tether_angular_accel(s, &u.u[i], p, i, &oddot_p, &omegadot_p));
    let omegadot_q = std::array::from_fn(|i| {
        let j_i = &p.quads[i].inertia;
        let omega = s.quads[i].omega;
        j_i.try_inverse()
            .expect("inertia validated positive definite")
            * (u.m[i] - omega.cross(&(j_i * omega)))
    });

    Ok(Accelerations {
        rddot_b: Vec2::new(acc[0], acc[1]),
        oddot_p,
        omegadot_p,
        omegadot_t,
        omegadot_q,
    })
}

/// Residuals of every equation of motion at the given accelerations;
/// all blocks vanish at the output of [`full_dynamics`].
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsResiduals {
    pub translation: Vec3,
    pub ball: Vec2,
    pub orientation: Vec3,
    pub tether: [Vec3; 3],
    pub quad: [Vec3; 3],
}

impl DynamicsResiduals {
    pub fn max_abs(&self) -> f64 {
        let mut m = self.translation.amax().max(self.ball.amax()).max(self.orientation.amax());
        for i in 0..3 {
            m = m.max(self.tether[i].amax()).max(self.quad[i].amax());
        }
        m
    }
}

pub fn dynamics_residuals(
    s: &SystemState,
    u: &ControlInput,
    p: &SystemParams,
    acc: &Accelerations,
) -> DynamicsResiduals {
    let mut packed = Vec8::zeros();
    packed.fixed_rows_mut::<2>(0).copy_from(&acc.rddot_b);
    packed.fixed_rows_mut::<3>(2).copy_from(&acc.oddot_p);
    packed.fixed_rows_mut::<3>(5).copy_from(&acc.omegadot_p);
    let coupled = coupled_residual(s, u, p, &packed);

    let e3 = Vec3::z();
    let om_hat = hat_mat(&s.omega_p);
    let tether = std::array::from_fn(|i| {
        let q = s.tethers[i].q.as_vec();
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        q.cross(&acc.oddot_p) * m_i
            + acc.omegadot_t[i] * (m_i * l_i)
            + q.cross(&(s.r_p * (om_hat * om_hat * x_i))) * m_i
            - q.cross(&(s.r_p * (hat_mat(&x_i) * acc.omegadot_p))) * m_i
            - q.cross(&(u.u[i] - e3 * (m_i * p.gravity)))
    });
    let quad = std::array::from_fn(|i| {
        let j_i = &p.quads[i].inertia;
        let omega = s.quads[i].omega;
        j_i * acc.omegadot_q[i] + omega.cross(&(j_i * omega)) - u.m[i]
    });

    DynamicsResiduals {
        translation: Vec3::new(coupled[0], coupled[1], coupled[2]),
        ball: Vec2::new(coupled[3], coupled[4]),
        orientation: Vec3::new(coupled[5], coupled[6], coupled[7]),
        tether,
        quad,
    }
}

/// Ball-and-plate accelerations under a given net force and plate-frame
/// torque, from the metric blocks and bias terms.
pub fn decoupled_from_wrench(
    s: &SystemState,
    force: &Vec3,
    torque: &Vec3,
    p: &SystemParams,
) -> Result<(Vec2, Vec3, Vec3), ModelError> {
    let blocks = mass_blocks(s, p);
    let (n1, n2) = bias_terms(s, p);
    let m = blocks.assembled();
    let mut rhs = Vec8::zeros();
    rhs.fixed_rows_mut::<2>(0).copy_from(&(-n1));
    let mut wrench = Vec6::zeros();
    wrench.fixed_rows_mut::<3>(0).copy_from(force);
    wrench.fixed_rows_mut::<3>(3).copy_from(torque);
    rhs.fixed_rows_mut::<6>(2).copy_from(&(wrench - n2));
    let acc = solve8(&m, &rhs)?;
    Ok((
        Vec2::new(acc[0], acc[1]),
        Vec3::new(acc[2], acc[3], acc[4]),
        Vec3::new(acc[5], acc[6], acc[7]),
    ))
}

/// Ball-and-plate accelerations under the given tether tensions, completely
/// decoupled from the quadrotors: net force `sum mu_i`, plate-frame torque
/// `sum x_i^ R^T mu_i`.
pub fn decoupled_dynamics(
    s: &SystemState,
    tensions: &TensionSet,
    p: &SystemParams,
) -> Result<(Vec2, Vec3, Vec3), ModelError> {
    let force = tensions.mu.iter().fold(Vec3::zeros(), |acc, mu| acc + mu);
    let torque = (0..3).fold(Vec3::zeros(), |acc, i| {
        acc + p.quads[i].attach.cross(&(s.r_p.transpose() * tensions.mu[i]))
    });
    decoupled_from_wrench(s, &force, &torque, p)
}

/// Tether tensions from the per-quadrotor Newton balance along the tether:
/// `mu_i = upar_i - q q^T m_i (oddot_p + R Omega^2 x_i - R x_i^ Omegadot_p
///   + g e3 - l_i |omega_i|^2 q_i)`.
///
/// Each `upar_i` must already be parallel to its tether direction.
pub fn tensions(
    s: &SystemState,
    u_par: &[Vec3; 3],
    oddot_p: &Vec3,
    omegadot_p: &Vec3,
    p: &SystemParams,
) -> Result<TensionSet, ModelError> {
    let e3 = Vec3::z();
    let om_hat = hat_mat(&s.omega_p);
    let mut mu = [Vec3::zeros(); 3];
    for i in 0..3 {
        let q = s.tethers[i].q.as_vec();
        let perp = u_par[i] - q * q.dot(&u_par[i]);
        let residual = perp.norm();
        if residual > tol::ALGEBRAIC * u_par[i].norm().max(1.0) {
            return Err(ModelError::NonParallelInput { index: i, residual });
        }
        let (m_i, l_i, x_i) = (p.quads[i].mass, p.quads[i].cable_length, p.quads[i].attach);
        let bracket = oddot_p + s.r_p * (om_hat * om_hat * x_i)
            - s.r_p * (hat_mat(&x_i) * omegadot_p)
            + e3 * p.gravity
            - q * (l_i * s.tethers[i].omega.norm_squared());
        mu[i] = u_par[i] - q * (q.dot(&bracket) * m_i);
    }
    Ok(TensionSet { mu })
}
