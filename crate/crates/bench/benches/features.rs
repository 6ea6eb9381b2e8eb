use criterion::{criterion_group, criterion_main, Criterion};
use difftraj::{FeatureExtractor, FeatureSpec, TimestepPlan};
use difftraj_bench::fixture;
use std::hint::black_box;

fn loss_and_grads(c: &mut Criterion) {
    let (params, schedule) = fixture(1);
    let x = [0.4, -1.2];
    let eps = [0.3, 0.7];
    c.bench_function("loss_and_grads", |b| {
        b.iter(|| params.loss_and_grads(black_box(&x), 50, &eps, &schedule, true, true).unwrap())
    });
    c.bench_function("step_norms", |b| {
        b.iter(|| params.step_norms(black_box(&x), 50, &eps, &schedule, true, true).unwrap())
    });
}

fn trajectory(c: &mut Criterion) {
    let (params, schedule) = fixture(2);
    let mut group = c.benchmark_group("extract");
    for (name, spec) in [("loss", FeatureSpec::loss_only()), ("all", FeatureSpec::all())] {
        let ex = FeatureExtractor::new(&params, &schedule, &TimestepPlan::Full, &spec, 3).unwrap();
        group.bench_function(name, |b| b.iter(|| ex.extract(7, "m", black_box(&[0.1, 0.2])).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, loss_and_grads, trajectory);
criterion_main!(benches);
