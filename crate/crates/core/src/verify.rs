//! Numerical embodiment of the stability analysis: Lyapunov function
//! evaluation and monitoring, gain-condition definiteness certificates,
//! boundary-layer decay fitting, and finite-difference oracles that check
//! the coded equations of motion against the energies they derive from.

use nalgebra::SMatrix;
use rand::{Rng, RngExt};
use thiserror::Error;

use crate::control::Gains;
use crate::geom::{attitude_error_plate, psi_attitude, Rotation, Vec3};
use crate::model::{kinetic_energy, potential_energy, Mat6, SystemParams, SystemState, Vec6};
use crate::sim::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("not enough samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("trajectory has no control traces")]
    MissingTraces,
    #[error("invalid constant: {0}")]
    InvalidConstant(String),
}

/// One monitored point along a trajectory: the Lyapunov values and the
/// norms `[|r_b|, |rdot_b|, |eta|, |Omega_p|, |o_p.e3|, |odot_p.e3|]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub v: f64,
    pub v2: f64,
    pub z: [f64; 6],
}

/// Composite Lyapunov function of the reduced closed loop:
/// `(k4 + c1 k3)/2 |r_b|^2 + c1 r_b . rdot_b + |rdot_b|^2 / 2
///  + (k2 + c2 k1) Psi + c2 eta . Omega_p + |Omega_p|^2 / 2
///  + k6/2 (o_p . e3)^2 + (odot_p . e3)^2 / 2`.
pub fn lyapunov_v(s: &SystemState, g: &Gains, c1: f64, c2: f64) -> f64 {
    let eta = attitude_error_plate(&s.r_p);
    let psi = psi_attitude(&s.r_p);
    let o_z = s.o_p.z;
    let v_z = s.v_p.z;
    0.5 * (g.k4 + c1 * g.k3) * s.r_b.norm_squared()
        + c1 * s.r_b.dot(&s.rdot_b)
        + 0.5 * s.rdot_b.norm_squared()
        + (g.k2 + c2 * g.k1) * psi
        + c2 * eta.dot(&s.omega_p)
        + 0.5 * s.omega_p.norm_squared()
        + 0.5 * g.k6 * o_z * o_z
        + 0.5 * v_z * v_z
}

/// Attitude-subsystem Lyapunov function
/// `|Omega_p|^2 / 2 + c0 eta . Omega_p + (k2 + c0 k1) Psi`.
pub fn lyapunov_v2(r_p: &Rotation, omega_p: &Vec3, g: &Gains, c0: f64) -> f64 {
    let eta = attitude_error_plate(r_p);
    0.5 * omega_p.norm_squared() + c0 * eta.dot(omega_p) + (g.k2 + c0 * g.k1) * psi_attitude(r_p)
}

/// Evaluates the monitored quantities at every sample of a trajectory.
pub fn lyapunov_series(traj: &Trajectory, g: &Gains) -> Vec<LyapunovSample> {
    traj.samples
        .iter()
        .map(|sample| {
            let s = &sample.state;
            let eta = attitude_error_plate(&s.r_p);
            LyapunovSample {
                t: sample.t,
                v: lyapunov_v(s, g, g.c1, g.c2),
                v2: lyapunov_v2(&s.r_p, &s.omega_p, g, g.c0),
                z: [
                    s.r_b.norm(),
                    s.rdot_b.norm(),
                    eta.norm(),
                    s.omega_p.norm(),
                    s.o_p.z.abs(),
                    s.v_p.z.abs(),
                ],
            }
        })
        .collect()
}

/// Definiteness certificate for one gain set.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub gains: Gains,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub big_c1: f64,
    pub big_c2: f64,
    /// Ascending eigenvalues of the symmetrized quadratic-form matrix.
    pub eigenvalues: [f64; 6],
    /// Largest normalized residual of the characteristic polynomial at the
    /// computed eigenvalues; cross-checks the eigensolver.
    pub charpoly_residual: f64,
    /// Accepted iff every eigenvalue is strictly negative. The
    /// position-row diagonal entry `2 k6` is positive for every positive
    /// gain set, so the matrix as stated is never negative definite; the
    /// spectrum is reported so the indefinite directions are visible.
    pub accepted: bool,
}

/// The quadratic-form matrix bounding the Lyapunov derivative, with the
/// attitude-transient constants `C1` (rate bound) and `C2` (error bound)
/// folded into the cross terms. Row/column order matches the z-vector
/// `[|r_b|, |rdot_b|, |eta|, |Omega_p|, |o_p.e3|, |odot_p.e3|]`.
pub fn gain_condition_matrix(g: &Gains, c1: f64, c2: f64, big_c1: f64, big_c2: f64) -> Mat6 {
    let cross_rb = 0.5 * (g.k2 * big_c2 + g.k1 * big_c1);
    let mut w = Mat6::zeros();
    w[(0, 0)] = -c1 * g.k4;
    w[(0, 1)] = cross_rb;
    w[(0, 5)] = 0.5 * g.k4 + 0.5 * big_c1 * big_c1;
    w[(1, 0)] = cross_rb;
    w[(1, 1)] = -g.k3 + c1;
    w[(1, 5)] = 0.5 * g.k3 + 0.5 * big_c2 * big_c2;
    w[(2, 2)] = -c2 * g.k2;
    w[(3, 3)] = -g.k1 + c2;
    w[(4, 4)] = 2.0 * g.k6;
    w[(4, 5)] = g.k5;
    w[(5, 0)] = w[(0, 5)];
    w[(5, 1)] = w[(1, 5)];
    w[(5, 4)] = g.k5;
    w[(5, 5)] = -g.k5;
    w
}

/// Characteristic polynomial coefficients by Faddeev-LeVerrier:
/// `p(x) = x^6 + c[0] x^5 + ... + c[5]`.
fn charpoly_coefficients(a: &Mat6) -> [f64; 6] {
    let mut coeffs = [0.0; 6];
    let mut b = Mat6::identity();
    for k in 1..=6 {
        b = a * b;
        let c = -b.trace() / k as f64;
        coeffs[k - 1] = c;
        b += Mat6::identity() * c;
    }
    coeffs
}

fn charpoly_residual(a: &Mat6, eigenvalues: &[f64]) -> f64 {
    let coeffs = charpoly_coefficients(a);
    let mut worst: f64 = 0.0;
    for &lambda in eigenvalues {
        let mut value = 1.0;
        let mut scale = 1.0;
        let mut pow = 1.0;
        // Horner from the leading coefficient; track the magnitude of the
        // evaluated terms to normalize the residual.
        for c in coeffs {
            value = value * lambda + c;
            scale = scale * lambda.abs() + c.abs();
            pow *= lambda.abs().max(1.0);
        }
        let _ = pow;
        worst = worst.max(value.abs() / scale.max(1.0));
    }
    worst
}

/// Builds the quadratic-form matrix, symmetrizes it, computes its spectrum
/// (cross-checked against the characteristic polynomial) and accepts iff the
/// largest eigenvalue is negative.
pub fn gain_condition_check(
    g: &Gains,
    c0: f64,
    c1: f64,
    c2: f64,
    big_c1: f64,
    big_c2: f64,
) -> GainCertificate {
    let w = gain_condition_matrix(g, c1, c2, big_c1, big_c2);
    let sym = (w + w.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let residual = charpoly_residual(&sym, &eigenvalues);
    let accepted = eigenvalues.iter().all(|&e| e < 0.0);
    GainCertificate {
        gains: *g,
        c0,
        c1,
        c2,
        big_c1,
        big_c2,
        eigenvalues: eigenvalues.try_into().expect("six eigenvalues"),
        charpoly_residual: residual,
        accepted,
    }
}

/// Brute-force negative-definiteness oracle: samples random directions and
/// checks the quadratic form. Disagrees with the eigenvalue route only with
/// vanishing probability for matrices away from the definiteness boundary.
pub fn negative_definite_brute_force<R: Rng>(m: &Mat6, samples: usize, rng: &mut R) -> bool {
    for _ in 0..samples {
        let mut z = Vec6::zeros();
        let mut norm2 = 0.0;
        while norm2 < 1e-12 {
            for i in 0..6 {
                z[i] = rng.random_range(-1.0..1.0);
            }
            norm2 = z.norm_squared();
        }
        if (z.transpose() * m * z)[(0, 0)] >= 0.0 {
            return false;
        }
    }
    true
}

/// Conservative transient bounds on `|Omega_p|` and `|eta|` from the initial
/// value of `V2`.
///
/// Sandwich: with `|eta . Omega| <= (|eta|^2 + |Omega|^2)/2` and
/// `|eta|^2 <= 2 Psi`,
/// `V2 >= (1 - c0) |Omega|^2 / 2 + (k2 + c0 k1 - c0) Psi`.
/// Since `V2(t) <= V2(0)` along the attitude loop,
/// `|Omega| <= sqrt(2 V2(0) / (1 - c0))` and
/// `|eta| <= sqrt(2 V2(0) / (k2 + c0 k1 - c0))`.
pub fn attitude_bounds_from_initial(
    s0: &SystemState,
    g: &Gains,
    c0: f64,
) -> Result<(f64, f64), VerifyError> {
    if !(0.0..1.0).contains(&c0) {
        return Err(VerifyError::InvalidConstant(format!(
            "c0 must lie in [0, 1) for the sandwich bounds, got {c0}"
        )));
    }
    let psi_coeff = g.k2 + c0 * g.k1 - c0;
    if psi_coeff <= 0.0 {
        return Err(VerifyError::InvalidConstant(format!(
            "k2 + c0 k1 - c0 must be positive, got {psi_coeff}"
        )));
    }
    let v2_0 = lyapunov_v2(&s0.r_p, &s0.omega_p, g, c0);
    let big_c1 = (2.0 * v2_0 / (1.0 - c0)).sqrt();
    let big_c2 = (2.0 * v2_0 / psi_coeff).sqrt();
    Ok((big_c1, big_c2))
}

/// A log-linear fit `y ~ exp(-rate t)` over the supplied points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub rate: f64,
    pub r_squared: f64,
    pub used: usize,
}

/// Least-squares line through `(t, ln y)`; points with `y <= 0` are skipped.
pub fn fit_exponential_decay(ts: &[f64], ys: &[f64]) -> Result<ExpFit, VerifyError> {
    let points: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    if points.len() < 3 {
        return Err(VerifyError::InsufficientSamples {
            needed: 3,
            have: points.len(),
        });
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (t, y) in &points {
        stt += (t - mean_t) * (t - mean_t);
        sty += (t - mean_t) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if stt == 0.0 {
        return Err(VerifyError::InsufficientSamples {
            needed: 3,
            have: 1,
        });
    }
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Ok(ExpFit {
        rate: -slope,
        r_squared,
        used: points.len(),
    })
}

/// Decay summary of one non-negative signal: peak, fitted post-peak rate,
/// and whether the signal is monotone after the peak (up to a noise floor).
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub peak: f64,
    pub peak_time: f64,
    pub fit: Option<ExpFit>,
    pub monotone_after_peak: bool,
}

/// Fits the fast decay of a signal from its peak down to two decades below
/// it (or to its resolution floor, whichever is higher). Restricting the
/// window to the first decades isolates the fast transient: further down
/// the signal rides the slowly decaying tracking residual, which would
/// otherwise dominate the regression. The floor is estimated from the tail
/// of the series.
pub fn decay_report(ts: &[f64], ys: &[f64]) -> DecayReport {
    assert_eq!(ts.len(), ys.len());
    if ys.is_empty() {
        return DecayReport {
            peak: 0.0,
            peak_time: 0.0,
            fit: None,
            monotone_after_peak: true,
        };
    }
    let peak_idx = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let peak = ys[peak_idx];
    let tail_start = ys.len() - (ys.len() / 10).max(1);
    let mut tail: Vec<f64> = ys[tail_start..].to_vec();
    tail.sort_by(f64::total_cmp);
    let plateau = tail[tail.len() / 2];
    let floor = (2.0 * plateau).max(1e-12).max(1e-2 * peak);

    let mut end = ys.len();
    for (k, &y) in ys.iter().enumerate().skip(peak_idx + 1) {
        if y < floor {
            end = k;
            break;
        }
    }
    let fit = if end > peak_idx + 3 && peak > 1e-12 {
        fit_exponential_decay(&ts[peak_idx..end], &ys[peak_idx..end]).ok()
    } else {
        None
    };
    let slack = (2.0 * floor).max(1e-6 * peak);
    let monotone_after_peak = ys[peak_idx..]
        .windows(2)
        .all(|w| w[1] <= w[0] + slack);
    DecayReport {
        peak,
        peak_time: ts[peak_idx],
        fit,
        monotone_after_peak,
    }
}

/// Per-quadrotor decay reports of the attitude tracking error norms along a
/// closed-loop trajectory.
pub fn boundary_layer_monitor(traj: &Trajectory) -> Result<[DecayReport; 3], VerifyError> {
    let series = attitude_error_series(traj)?;
    Ok(std::array::from_fn(|i| {
        decay_report(&series.0, &series.1[i])
    }))
}

/// `(timestamps, per-quad |e_R| series)` extracted from the traces.
pub fn attitude_error_series(traj: &Trajectory) -> Result<(Vec<f64>, [Vec<f64>; 3]), VerifyError> {
    let mut ts = Vec::new();
    let mut series: [Vec<f64>; 3] = Default::default();
    for sample in &traj.samples {
        let trace = sample.trace.as_ref().ok_or(VerifyError::MissingTraces)?;
        ts.push(sample.t);
        for i in 0..3 {
            series[i].push(trace.e_r_norm[i]);
        }
    }
    if ts.len() < 3 {
        return Err(VerifyError::InsufficientSamples {
            needed: 3,
            have: ts.len(),
        });
    }
    Ok((ts, series))
}

/// Decay report of `max_i |e_R_i|`; the quantity swept over the timescale
/// parameter.
pub fn boundary_layer_rate(traj: &Trajectory) -> Result<DecayReport, VerifyError> {
    let (ts, series) = attitude_error_series(traj)?;
    let max_series: Vec<f64> = (0..ts.len())
        .map(|k| series.iter().map(|s| s[k]).fold(0.0, f64::max))
        .collect();
    Ok(decay_report(&ts, &max_series))
}

/// Finite-difference Euler-Lagrange oracle for the ball coordinates.
///
/// At every interior sample, `d/dt (dL/drdot_b)` is formed by a central
/// difference across neighboring samples of the momentum `dL/drdot_b`, which
/// is itself obtained by perturbing the coded energy functions; `dL/dr_b`
/// likewise. The ball has no external force, so the residual of
/// `d/dt (dL/drdot_b) - dL/dr_b` measures how well the integrated motion
/// satisfies the Lagrangian the equations were derived from. Returns the
/// maximum residual norm.
pub fn euler_lagrange_residual(traj: &Trajectory, p: &SystemParams) -> Result<f64, VerifyError> {
    if traj.len() < 3 {
        return Err(VerifyError::InsufficientSamples {
            needed: 3,
            have: traj.len(),
        });
    }
    let lagrangian = |s: &SystemState| kinetic_energy(s, p) - potential_energy(s, p);
    let h = 1e-6;
    let momentum = |s: &SystemState| -> [f64; 2] {
        std::array::from_fn(|j| {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus.rdot_b[j] += h;
            minus.rdot_b[j] -= h;
            (lagrangian(&plus) - lagrangian(&minus)) / (2.0 * h)
        })
    };
    let config_force = |s: &SystemState| -> [f64; 2] {
        std::array::from_fn(|j| {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus.r_b[j] += h;
            minus.r_b[j] -= h;
            (lagrangian(&plus) - lagrangian(&minus)) / (2.0 * h)
        })
    };

    let mut worst: f64 = 0.0;
    for w in traj.samples.windows(3) {
        let dt_total = w[2].t - w[0].t;
        let p_prev = momentum(&w[0].state);
        let p_next = momentum(&w[2].state);
        let g_mid = config_force(&w[1].state);
        for j in 0..2 {
            let residual = (p_next[j] - p_prev[j]) / dt_total - g_mid[j];
            worst = worst.max(residual.abs());
        }
    }
    Ok(worst)
}

/// Work-energy balance along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAudit {
    /// Largest `|dE/dt - sum(u_i . odot_i + M_i . Omega_i)|`.
    pub max_abs_imbalance: f64,
    /// The same, relative to the largest power or energy-rate magnitude seen.
    pub max_rel_imbalance: f64,
    /// Normalization used for the relative figure.
    pub scale: f64,
}

/// Central-difference power audit: the rate of change of total energy must
/// equal the power injected by the thrusts and moments actually applied.
pub fn energy_audit(traj: &Trajectory, p: &SystemParams) -> Result<EnergyAudit, VerifyError> {
    if traj.len() < 3 {
        return Err(VerifyError::InsufficientSamples {
            needed: 3,
            have: traj.len(),
        });
    }
    let power = |sample: &crate::sim::Sample| -> f64 {
        match &sample.trace {
            None => 0.0,
            Some(trace) => {
                let s = &sample.state;
                let mut total = 0.0;
                for i in 0..3 {
                    let thrust = s.quads[i].r * Vec3::z() * trace.f[i];
                    total += thrust.dot(&s.quad_velocity(i, p));
                    total += trace.moment[i].dot(&s.quads[i].omega);
                }
                total
            }
        }
    };
    let mut scale: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for w in traj.samples.windows(3) {
        let e_prev = w[0].diag.e_kin + w[0].diag.e_pot;
        let e_next = w[2].diag.e_kin + w[2].diag.e_pot;
        let de_dt = (e_next - e_prev) / (w[2].t - w[0].t);
        let p_mid = power(&w[1]);
        scale = scale.max(de_dt.abs()).max(p_mid.abs());
        worst = worst.max((de_dt - p_mid).abs());
    }
    Ok(EnergyAudit {
        max_abs_imbalance: worst,
        max_rel_imbalance: worst / scale,
        scale,
    })
}

/// Largest sample-to-sample increase of `V` after the transient window
/// (zero when `V` is non-increasing there).
pub fn lyapunov_max_increase(series: &[LyapunovSample], after: f64) -> f64 {
    series
        .windows(2)
        .filter(|w| w[0].t >= after)
        .map(|w| w[1].v - w[0].v)
        .fold(0.0, f64::max)
}

#[allow(dead_code)]
type Mat6Alias = SMatrix<f64, 6, 6>;
