//! Manifold primitives for SO(3) and S^2.
//!
//! Rotations are stored as plain 3x3 matrices (validated on construction),
//! tether directions as unit vectors. The hat map sends a vector to the
//! skew-symmetric matrix acting as a cross product, vee inverts it, and the
//! exponential map is evaluated with the Rodrigues formula.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Centralized tolerances for algebraic identities and manifold membership.
pub mod tol {
    /// Orthogonality / unit-norm / skew-symmetry checks.
    pub const ALGEBRAIC: f64 = 1e-9;
    /// Parallel / perpendicular decomposition checks.
    pub const DECOMPOSITION: f64 = 1e-10;
    /// Residual of the equations of motion after a linear solve.
    pub const DYNAMICS_RESIDUAL: f64 = 1e-8;
    /// Wrench reconstruction after min-norm tension allocation.
    pub const ALLOCATION: f64 = 1e-10;
    /// Below this rotation angle the exponential map switches to its series.
    pub const SMALL_ANGLE: f64 = 1e-8;
    /// Condition number beyond which a linear system is treated as singular.
    pub const MAX_CONDITION: f64 = 1e12;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("matrix is not skew-symmetric: |M + M^T| = {residual:.3e}")]
    NonSkewInput { residual: f64 },
    #[error("matrix is not a rotation: |R^T R - I| = {ortho_residual:.3e}, det = {det}")]
    NotARotation { ortho_residual: f64, det: f64 },
    #[error("vector is not unit length: |q| = {norm}")]
    NotUnitLength { norm: f64 },
}

/// A rotation matrix in SO(3): `R^T R = I` and `det R = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthogonality and orientation before wrapping.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeomError> {
        let ortho_residual = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho_residual > tol::ALGEBRAIC || (det - 1.0).abs() > tol::ALGEBRAIC {
            return Err(GeomError::NotARotation {
                ortho_residual,
                det,
            });
        }
        Ok(Rotation(m))
    }

    /// Wraps without validation; for matrices known orthogonal by construction.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Frobenius deviation of `R^T R` from the identity.
    pub fn ortho_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    /// One Newton step towards the orthogonal polar factor,
    /// `R <- R (3I - R^T R) / 2`. Converges quadratically for nearly
    /// orthogonal input; used as post-step drift correction.
    pub fn reorthonormalize(&mut self) {
        let correction = (Mat3::identity() * 3.0 - self.0.transpose() * self.0) * 0.5;
        self.0 *= correction;
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        (((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
    }
}

impl std::ops::Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul<Rotation> for Rotation {
    type Output = Rotation;
    fn mul(self, r: Rotation) -> Rotation {
        Rotation(self.0 * r.0)
    }
}

/// A unit vector on S^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec(Vec3);

impl UnitVec {
    pub fn new(v: Vec3) -> Result<Self, GeomError> {
        let norm = v.norm();
        if (norm - 1.0).abs() > tol::ALGEBRAIC {
            return Err(GeomError::NotUnitLength { norm });
        }
        Ok(UnitVec(v))
    }

    /// Normalizes the input; panics on the zero vector.
    pub fn normalized(v: Vec3) -> Self {
        let norm = v.norm();
        assert!(norm > 0.0, "cannot normalize the zero vector");
        UnitVec(v / norm)
    }

    /// Wraps without validation; for vectors unit by construction, and for
    /// deliberately corrupted inputs in residual-reporting tests.
    pub fn new_unchecked(v: Vec3) -> Self {
        UnitVec(v)
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn e3() -> Self {
        UnitVec(Vec3::z())
    }
}

/// A skew-symmetric matrix, `M + M^T = 0` exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewMat(Mat3);

impl SkewMat {
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// The axis vector, `hat(axis) = self`.
    pub fn axis(&self) -> Vec3 {
        Vec3::new(self.0[(2, 1)], self.0[(0, 2)], self.0[(1, 0)])
    }
}

/// The hat map: `hat(v) w = v x w`.
pub fn hat(v: &Vec3) -> SkewMat {
    SkewMat(Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    ))
}

/// Convenience: the raw matrix of `hat(v)`.
pub fn hat_mat(v: &Vec3) -> Mat3 {
    *hat(v).matrix()
}

/// Inverse of the hat map, validating skew-symmetry of the input.
pub fn vee(m: &Mat3) -> Result<Vec3, GeomError> {
    let residual = (m + m.transpose()).norm();
    if residual > tol::ALGEBRAIC {
        return Err(GeomError::NonSkewInput { residual });
    }
    // Average the two off-diagonal triangles so that vee(skew part) is exact.
    Ok(Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// Vee of the skew part of an arbitrary matrix, `(M - M^T)/2`, no validation.
pub fn vee_skew_part(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map so(3) -> SO(3) via the Rodrigues formula.
///
/// Below [`tol::SMALL_ANGLE`] the sinc-like coefficients use their series
/// expansions to avoid 0/0.
pub fn exp_so3(v: &Vec3) -> Rotation {
    let theta = v.norm();
    let k = hat_mat(v);
    let (a, b) = if theta < tol::SMALL_ANGLE {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation::from_matrix_unchecked(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) -> so(3); returns the rotation vector with angle in
/// [0, pi]. Goes through the quaternion representation, which stays
/// well-conditioned at every angle including near pi.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let q = rotation_to_quaternion(r);
    let v = Vec3::new(q[1], q[2], q[3]);
    let vn = v.norm();
    if vn < tol::SMALL_ANGLE {
        // theta ~ 2 vn; the rotation vector is 2 v to third order.
        return v * 2.0;
    }
    let theta = 2.0 * vn.atan2(q[0]);
    v * (theta / vn)
}

/// Attitude error function `Psi(R) = trace(I - R) / 2`.
pub fn psi_attitude(r: &Rotation) -> f64 {
    0.5 * (3.0 - r.matrix().trace())
}

/// Gradient of `Psi` on SO(3): `eta = vee((R - R^T)/2)`.
pub fn attitude_error_plate(r_p: &Rotation) -> Vec3 {
    vee_skew_part(r_p.matrix())
}

/// Quadrotor attitude tracking errors:
/// `e_R = vee((R_d^T R - R^T R_d)/2)` and `e_Omega = Omega - R^T R_d Omega_d`.
pub fn quad_attitude_errors(
    r_i: &Rotation,
    omega_i: &Vec3,
    r_id: &Rotation,
    omega_id: &Vec3,
) -> (Vec3, Vec3) {
    let rel = r_id.matrix().transpose() * r_i.matrix();
    // vee_skew_part already carries the 1/2: (R_d^T R - R^T R_d)/2.
    let e_r = vee_skew_part(&rel);
    let e_omega = omega_i - rel.transpose() * omega_id;
    (e_r, e_omega)
}

/// Rotation matrix to Hamilton quaternion `[w, x, y, z]` with `w >= 0`.
pub fn rotation_to_quaternion(r: &Rotation) -> [f64; 4] {
    let m = r.matrix();
    let trace = m.trace();
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    [
        sign * w / norm,
        sign * x / norm,
        sign * y / norm,
        sign * z / norm,
    ]
}
