use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparse_detect::boundary::{boundary_curve, SolverConfig};
use sparse_detect::detectors::DetectorKind;
use sparse_detect::exec::Execution;
use sparse_detect::experiments::{linspace, run_full_sweep, SweepConfig, SweepMode};
use sparse_detect::signal::SpikeSlabPrior;

fn small_sweep() -> SweepConfig {
    let mut c = SweepConfig::desk(SweepMode::FullVector).unwrap();
    c.n = 64;
    c.m = 32;
    c.sigma_w_grid = vec![0.5, 2.0];
    c.x0_grid = vec![2.0, 6.0];
    c.trials = 2;
    c.bp.max_iters = 5;
    c
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn full_sweep(c: &mut Criterion) {
    let cfg = small_sweep();
    let mut g = c.benchmark_group("full_sweep");
    g.sample_size(10);
    for (name, mode) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(run_full_sweep(&cfg, mode).unwrap()))
        });
    }
    g.finish();
}

fn boundary(c: &mut Criterion) {
    let prior = SpikeSlabPrior::gaussian(0.05, 5.0).unwrap();
    let solver = SolverConfig::for_prior(&prior);
    let grid = linspace(0.1, 6.0, 60);
    let mut g = c.benchmark_group("boundary_curve");
    for (name, mode) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(boundary_curve(&DetectorKind::Bht, &grid, 4, &prior, &solver, mode).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, full_sweep, boundary);
criterion_main!(benches);
