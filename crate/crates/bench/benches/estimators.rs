use criterion::{criterion_group, criterion_main, Criterion};
use goalaudit_bench::{fmb_problem, ols_problem, panel_problem, synthetic_config};
use goalaudit_core::pipeline::audit_in_memory;
use goalaudit_core::regression::{fmb_estimate, ols, panel_fe, ClusterDim, FixedEffects, FmbOptions};
use std::hint::black_box;

fn estimators(c: &mut Criterion) {
    let (design, y) = ols_problem(1_000, 5);
    c.bench_function("ols 1000x6", |b| b.iter(|| ols(black_box(&design), black_box(&y)).unwrap()));

    let obs = fmb_problem(200, 36, 24);
    let names = vec!["blind_score".to_string(), "diff".to_string()];
    c.bench_function("fama_macbeth 200 firms x 36 periods", |b| {
        b.iter(|| fmb_estimate(black_box(&obs), &names, FmbOptions::default()).unwrap())
    });

    let data = panel_problem(200, 30);
    for (label, cluster) in [("firm", ClusterDim::Firm), ("two-way", ClusterDim::FirmTime)] {
        c.bench_function(&format!("panel_fe firm+time 6000 rows, {label} clusters"), |b| {
            b.iter(|| panel_fe(black_box(&data), FixedEffects::FIRM_TIME, cluster).unwrap())
        });
    }
}

fn audit(c: &mut Criterion) {
    let cfg = synthetic_config(100, 24);
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("synthetic audit 100 firms x 24 periods", |b| {
        b.iter(|| audit_in_memory(black_box(&cfg)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, estimators, audit);
criterion_main!(benches);
