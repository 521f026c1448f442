use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use grouploss_bench::realistic_fixture;
use grouploss_core::calibration::{fit_calibration_curve, isotonic_fit, DEFAULT_BANDWIDTH_FRACTION};
use grouploss_core::partition::RegressionTree;
use grouploss_core::simulate::true_gl_monte_carlo;
use grouploss_core::{estimate, RunConfig, ScoringRule, SimulatorSpec};

fn tree(c: &mut Criterion) {
    let mut group = c.benchmark_group("regression_tree");
    for n in [1_000usize, 10_000] {
        let sim = realistic_fixture(n, 1);
        let rows: Vec<usize> = (0..n).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| RegressionTree::fit(&sim.features, &sim.labels, black_box(&rows), n / 30))
        });
    }
    group.finish();
}

fn calibration(c: &mut Criterion) {
    let sim = realistic_fixture(50_000, 2);
    c.bench_function("lowess_50k", |b| {
        b.iter(|| fit_calibration_curve(black_box(&sim.scores), &sim.labels, DEFAULT_BANDWIDTH_FRACTION).unwrap())
    });
    c.bench_function("isotonic_50k", |b| b.iter(|| isotonic_fit(black_box(&sim.scores), &sim.labels).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    group.sample_size(10);
    for n in [10_000usize, 100_000] {
        let ds = realistic_fixture(n, 3).to_dataset().unwrap();
        let config = RunConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| estimate(black_box(&ds), &config).unwrap()));
    }
    group.finish();

    let spec = SimulatorSpec::default();
    let mut oracle = c.benchmark_group("oracle");
    oracle.sample_size(10);
    oracle.bench_function("true_gl_1m", |b| {
        b.iter(|| true_gl_monte_carlo(&spec, ScoringRule::BRIER, 1_000_000, black_box(4)).unwrap())
    });
    oracle.finish();
}

criterion_group!(benches, tree, calibration, pipeline);
criterion_main!(benches);
