use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wcs_core::config::ExperimentConfig;
use wcs_core::par::Execution;
use wcs_core::rng::{stream, Stream};
use wcs_core::sweep::run_sweep;
use wcs_core::validate::{monte_carlo_sq_norm, OracleInstance};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn sweep(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.sim.duration = 20.0;
    let deltas = [0.0, 0.005, 0.03, 0.1];
    let seeds = [1, 2];
    let mut group = c.benchmark_group("sweep_4x2_20s");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_sweep(black_box(&cfg), &deltas, &seeds, exec).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut rng = stream(3, Stream::Oracle(0));
    let inst = OracleInstance::random(&mut rng, 4, 4).unwrap();
    let mut group = c.benchmark_group("oracle_100k_m10");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| monte_carlo_sq_norm(black_box(&inst), 10, 100_000, 1, 0, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, oracle);
criterion_main!(benches);
