use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use inclusive_core::evaluation::{fid, fit_gaussian, kl_to_uniform, EmpiricalDistribution};

fn features(n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            (0..d)
                .map(|j| ((k * 31 + j * 17) % 97) as f64 / 97.0 + shift)
                .collect()
        })
        .collect()
}

fn fid_by_width(c: &mut Criterion) {
    let mut group = c.benchmark_group("fid");
    for d in [8, 32, 64] {
        let a = fit_gaussian(&features(256, d, 0.0)).unwrap();
        let b = fit_gaussian(&features(256, d, 0.1)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &(a, b), |bch, (a, b)| {
            bch.iter(|| fid(a, b).unwrap())
        });
    }
    group.finish();
}

fn kl(c: &mut Criterion) {
    let dist = EmpiricalDistribution::from_counts((0..256).map(|k| (k % 7) as u64).collect());
    c.bench_function("kl_to_uniform/256", |b| {
        b.iter(|| kl_to_uniform(&dist).unwrap())
    });
}

criterion_group!(benches, fid_by_width, kl);
criterion_main!(benches);
