//! Sequential vs parallel timings for the data-parallel kernels and ensembles.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use npns::config::SimConfig;
use npns::ensemble::run_ensemble_with;
use npns::linalg::{pcg, CgOptions, FivePoint};
use npns::par::{self, Execution};

/// Runs `f` on one worker for `Sequential`, on the global pool otherwise.
fn on<R: Send>(exec: Execution, f: impl FnOnce() -> R + Send) -> R {
    match exec {
        Execution::Sequential => rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("pool")
            .install(f),
        Execution::Parallel => f(),
    }
}

fn execs() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn kernels(c: &mut Criterion) {
    let m = 512;
    let n = m * m;
    let op = FivePoint::new(m, m, 1.0, 1.0, vec![1e-2; n], false);
    let x: Vec<f64> = (0..n).map(|k| ((k * 7919) % 1013) as f64 * 1e-3).collect();
    let mut g = c.benchmark_group("kernels_512");
    for (name, exec) in execs() {
        g.bench_function(BenchmarkId::new("apply", name), |b| {
            let mut y = vec![0.0; n];
            b.iter(|| on(exec, || op.apply(black_box(&x), &mut y)))
        });
        g.bench_function(BenchmarkId::new("dot", name), |b| {
            b.iter(|| on(exec, || par::dot(black_box(&x), black_box(&x))))
        });
    }
    g.finish();

    let m = 128;
    let op = FivePoint::new(m, m, 1.0, 1.0, vec![1e-2; m * m], false);
    let rhs: Vec<f64> = (0..m * m).map(|k| ((k % m) as f64 - 64.0) * 1e-2).collect();
    let mut g = c.benchmark_group("pcg_128");
    g.sample_size(20);
    for (name, exec) in execs() {
        g.bench_function(name, |b| {
            b.iter(|| {
                on(exec, || {
                    let mut sol = vec![0.0; m * m];
                    pcg(&op, &rhs, &mut sol, CgOptions::default(), "bench").expect("converges")
                })
            })
        });
    }
    g.finish();
}

fn ensembles(c: &mut Criterion) {
    let mut cfg = SimConfig::default();
    cfg.grid.nx = 16;
    cfg.grid.ny = 16;
    cfg.time.t_end = 0.005;
    cfg.noise.k = 4;
    cfg.ensemble.n = 8;
    let mut g = c.benchmark_group("ensemble_8x16");
    g.sample_size(10);
    for (name, exec) in execs() {
        g.bench_function(name, |b| b.iter(|| run_ensemble_with(&cfg, exec).expect("runs")));
    }
    g.finish();
}

criterion_group!(benches, kernels, ensembles);
criterion_main!(benches);
