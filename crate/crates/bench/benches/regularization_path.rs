use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spectral_eot::eot::{canonical_path, coupling_distance_sq, entropic_cost_curve};
use spectral_eot::solve_at;
use spectral_eot_bench::{log_grid, random_pair};

fn decomposition(c: &mut Criterion) {
    let mut group = c.benchmark_group("canonical_path");
    group.sample_size(10);
    for d in [50usize, 200, 500] {
        let (a, b) = random_pair(d, 1, false);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |bench, _| {
            bench.iter(|| canonical_path(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (a, b) = random_pair(200, 2, true);
    let path = canonical_path(&a, &b).unwrap();
    let grid = log_grid(1e2, 1e-6, 10_000);

    c.bench_function("solve_at/d200", |bench| {
        bench.iter(|| solve_at(&path, black_box(0.1), false).unwrap())
    });
    c.bench_function("solve_at_materialized/d200", |bench| {
        bench.iter(|| solve_at(&path, black_box(0.1), true).unwrap())
    });
    c.bench_function("entropic_cost_curve/d200x1e4", |bench| {
        bench.iter(|| entropic_cost_curve(&path, black_box(&grid)).unwrap())
    });
    c.bench_function("coupling_distance_sq/d200", |bench| {
        bench.iter(|| coupling_distance_sq(&path, black_box(0.1)).unwrap())
    });
}

criterion_group!(benches, decomposition, evaluation);
criterion_main!(benches);
