use cbsql::distributional::{distributional_soft_target, CategoricalReturnDistribution, Support};
use cbsql::{mellowmax, softmax_policy, FactoredKtModel, OperatorMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_mellowmax(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("mellowmax");
    for n in [2usize, 18, 256] {
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        group.bench_with_input(BenchmarkId::new("mean", n), &q, |b, q| {
            b.iter(|| mellowmax(black_box(q), 3.5, OperatorMode::MellowmaxMean).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("softmax", n), &q, |b, q| {
            b.iter(|| softmax_policy(black_box(q), 3.5).unwrap())
        });
    }
    group.finish();
}

fn bench_pseudo_count(c: &mut Criterion) {
    let mut model = FactoredKtModel::new(&[16, 16]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let s = [rng.random_range(0..16), rng.random_range(0..16)];
        model.update(&s).unwrap();
    }
    c.bench_function("kt_pseudo_count", |b| {
        b.iter(|| model.pseudo_count(black_box(&[3, 7])).unwrap())
    });
}

fn bench_distributional(c: &mut Criterion) {
    let support = Support::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probs: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let w: Vec<f64> = (0..support.len()).map(|_| rng.random::<f64>()).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        })
        .collect();
    let dist = CategoricalReturnDistribution::new(support, probs).unwrap();
    c.bench_function("distributional_soft_target_51x4", |b| {
        b.iter(|| distributional_soft_target(black_box(0.5), 0.99, &dist, 2.0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_mellowmax,
    bench_pseudo_count,
    bench_distributional
);
criterion_main!(benches);
