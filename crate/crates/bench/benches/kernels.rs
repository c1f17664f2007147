use std::hint::black_box;

use basisrisk::evaluation::{generate_one_factor, quantile_r2_bar, OneFactorSpec};
use basisrisk::{
    decompose, panel_eigen, subsample_experiment, zone_mean_index, Denominator, Metric, Target,
    YieldPanel,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn panel(n: usize, t: usize) -> YieldPanel {
    generate_one_factor(&OneFactorSpec::new(n, t), 1).unwrap().panel
}

fn eigen(c: &mut Criterion) {
    let mut group = c.benchmark_group("panel_eigen");
    for n in [100usize, 10_000, 100_000] {
        let p = panel(n, 4);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("gram_t4", n), &p, |b, p| {
            b.iter(|| panel_eigen(black_box(p), Target::Correlation, Denominator::Unbiased))
        });
    }
    let p = panel(300, 400);
    group.bench_function("direct_n300_t400", |b| {
        b.iter(|| panel_eigen(black_box(&p), Target::Correlation, Denominator::Unbiased))
    });
    group.finish();
}

fn decomposition(c: &mut Criterion) {
    let p = panel(1000, 8);
    let index = zone_mean_index(&p).into();
    c.bench_function("decompose_n1000_t8", |b| {
        b.iter(|| decompose(black_box(&p), &index, Metric::Avg, Denominator::Unbiased))
    });
    let p = panel(200, 4);
    c.bench_function("subsample_experiment_n200", |b| {
        b.iter(|| subsample_experiment(black_box(&p), &[10, 20, 50, 100], 200, 7))
    });
}

fn quantile(c: &mut Criterion) {
    let mut group = c.benchmark_group("quantile_r2_bar");
    for t in [8usize, 30, 100] {
        let p = panel(50, t);
        let f = zone_mean_index(&p);
        group.bench_with_input(BenchmarkId::from_parameter(t), &p, |b, p| {
            b.iter(|| quantile_r2_bar(black_box(p), &f, 0.3))
        });
    }
    group.finish();
}

criterion_group!(benches, eigen, decomposition, quantile);
criterion_main!(benches);
