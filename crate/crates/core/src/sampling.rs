//! Seeded random states, rotations, and gains for randomized verification
//! sweeps. Every sweep in the library and the CLI threads an explicit RNG so
//! runs are reproducible from a seed.

use rand::{Rng, RngExt};

use crate::control::Gains;
use crate::geom::{exp_so3, Rotation, UnitVec, Vec2, Vec3};
use crate::model::{ControlInput, SystemParams, SystemState, TetherState};

pub fn random_vec3<R: Rng>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_vec2<R: Rng>(rng: &mut R, scale: f64) -> Vec2 {
    Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    exp_so3(&(axis.as_vec() * angle))
}

pub fn random_unit<R: Rng>(rng: &mut R) -> UnitVec {
    loop {
        let v = random_vec3(rng, 1.0);
        let n = v.norm();
        if n > 1e-3 {
            return UnitVec::normalized(v);
        }
    }
}

/// A random state satisfying every manifold constraint: unit tether
/// directions, tether rates orthogonal to their directions, exact rotations.
pub fn random_state<R: Rng>(rng: &mut R, scale: f64) -> SystemState {
    let tethers = std::array::from_fn(|_| {
        let q = random_unit(rng);
        let omega_raw = random_vec3(rng, scale);
        let omega = omega_raw - q.as_vec() * omega_raw.dot(q.as_vec());
        TetherState { q, omega }
    });
    let quads = std::array::from_fn(|_| crate::model::QuadrotorState {
        r: random_rotation(rng),
        omega: random_vec3(rng, scale),
    });
    SystemState {
        o_p: random_vec3(rng, scale),
        v_p: random_vec3(rng, scale),
        r_p: random_rotation(rng),
        omega_p: random_vec3(rng, scale),
        r_b: random_vec2(rng, scale),
        rdot_b: random_vec2(rng, scale),
        tethers,
        quads,
    }
}

pub fn random_control<R: Rng>(rng: &mut R, scale: f64) -> ControlInput {
    ControlInput {
        u: std::array::from_fn(|_| random_vec3(rng, scale)),
        m: std::array::from_fn(|_| random_vec3(rng, scale * 0.1)),
    }
}

/// Strictly positive gains drawn log-uniformly over a moderate range,
/// with `eps <= 1` and small Lyapunov cross-term constants.
pub fn random_gains<R: Rng>(rng: &mut R) -> Gains {
    let mut pick = |lo: f64, hi: f64| -> f64 {
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        rng.random_range(ln_lo..ln_hi).exp()
    };
    Gains {
        k1: pick(0.5, 40.0),
        k2: pick(0.5, 40.0),
        k3: pick(0.5, 40.0),
        k4: pick(0.5, 40.0),
        k5: pick(0.5, 40.0),
        k6: pick(0.5, 40.0),
        k7: pick(0.5, 40.0),
        k8: pick(0.5, 40.0),
        k_r: pick(0.01, 1.0),
        k_omega: pick(0.01, 1.0),
        eps: pick(0.02, 1.0),
        c0: pick(1e-3, 0.5),
        c1: pick(1e-3, 0.5),
        c2: pick(1e-3, 0.5),
    }
}

/// Default symmetric three-tether parameter set used across tests:
/// attachment points at radius 0.5 m and bearings 90/210/330 degrees.
pub fn default_params() -> SystemParams {
    SystemParams::symmetric_default()
}
