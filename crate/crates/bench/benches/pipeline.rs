//! Benchmarks of the hot paths: manifold primitives, the coupled dynamics
//! solve, one control tick, one integrator step, and a short closed-loop run.

use criterion::{criterion_group, criterion_main, Criterion};
use plate_swarm_core::control::{compute_controls, ControllerMemory};
use plate_swarm_core::geom::{exp_so3, log_so3};
use plate_swarm_core::model::full_dynamics;
use plate_swarm_core::sampling;
use plate_swarm_core::sim::{simulate, step, IntegratorConfig, Mode, Scenario};
use plate_swarm_core::{Gains, SystemParams, SystemState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_geom(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = sampling::random_vec3(&mut rng, 2.0);
    let r = sampling::random_rotation(&mut rng);
    c.bench_function("exp_so3", |b| b.iter(|| exp_so3(black_box(&v))));
    c.bench_function("log_so3", |b| b.iter(|| log_so3(black_box(&r))));
}

fn bench_dynamics(c: &mut Criterion) {
    let p = SystemParams::symmetric_default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = sampling::random_state(&mut rng, 1.0);
    let u = sampling::random_control(&mut rng, 10.0);
    c.bench_function("full_dynamics", |b| {
        b.iter(|| full_dynamics(black_box(&s), black_box(&u), &p).unwrap())
    });
}

fn bench_control(c: &mut Criterion) {
    let p = SystemParams::symmetric_default();
    let g = Gains::defaults();
    let s = SystemState::rest();
    let mem = ControllerMemory::new();
    c.bench_function("compute_controls", |b| {
        b.iter(|| compute_controls(black_box(&s), &g, &mem, &p, 0.0, 1e-3).unwrap())
    });
}

fn bench_step(c: &mut Criterion) {
    let p = SystemParams::symmetric_default();
    let g = Gains::defaults();
    let s = SystemState::rest();
    let (input, _, _) = compute_controls(&s, &g, &ControllerMemory::new(), &p, 0.0, 1e-3).unwrap();
    c.bench_function("integrator_step", |b| {
        b.iter(|| step(black_box(&s), &input, &p, 1e-3).unwrap())
    });
}

fn bench_short_run(c: &mut Criterion) {
    let sc = Scenario {
        params: SystemParams::symmetric_default(),
        gains: Gains::defaults(),
        initial: SystemState::rest(),
        config: IntegratorConfig {
            dt: 1e-3,
            duration: 0.25,
            decimation: 1,
            projection_tol: 1e-9,
        },
        mode: Mode::ClosedLoop,
    };
    c.bench_function("closed_loop_250_steps", |b| b.iter(|| simulate(black_box(&sc)).unwrap()));
}

criterion_group!(
    benches,
    bench_geom,
    bench_dynamics,
    bench_control,
    bench_step,
    bench_short_run
);
criterion_main!(benches);
