use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use linkfact::{
    bnmf, boolean_matmul, lmf, nmf_mu, rank_scan, rnmf, wnmf, EnsembleSpec, ModelKind, Thresholder,
};
use linkfact_bench::{dog, fixed_sweeps, full_mask, gaussian, holdout_mask};

fn real_solvers(c: &mut Criterion) {
    let x = gaussian();
    let mask = holdout_mask(x.nrows(), x.ncols());
    let opts = fixed_sweeps(100);
    let mut group = c.benchmark_group("real_100_sweeps");
    for k in [2, 4, 8] {
        group.bench_with_input(BenchmarkId::new("nmf_mu", k), &k, |b, &k| {
            b.iter(|| nmf_mu(&x, k, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("wnmf", k), &k, |b, &k| {
            b.iter(|| wnmf(&x, &mask, k, &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("rnmf", k), &k, |b, &k| {
            b.iter(|| rnmf(&x, &mask, k, &opts).unwrap())
        });
    }
    group.finish();
}

fn boolean_solvers(c: &mut Criterion) {
    let x = dog();
    let mask = full_mask(&x.to_dense());
    let opts = fixed_sweeps(50);
    let mut group = c.benchmark_group("boolean_50_sweeps");
    group.sample_size(10);
    for th in [Thresholder::Otsu, Thresholder::KMeans] {
        group.bench_with_input(BenchmarkId::new("bnmf", th), &th, |b, &th| {
            b.iter(|| bnmf(&x, None, 4, th, &opts).unwrap())
        });
    }
    group.bench_function("lmf/k4", |b| b.iter(|| lmf(&x, &mask, 4, &opts).unwrap()));
    let (w, h) = (x.clone(), x.transpose());
    group.bench_function("boolean_matmul/400x16x400", |b| b.iter(|| boolean_matmul(&w, &h).unwrap()));
    group.finish();
}

fn scan(c: &mut Criterion) {
    let x = gaussian();
    let spec = EnsembleSpec {
        perturbations: 5,
        kind: ModelKind::Wnmf,
        options: fixed_sweeps(50),
        ..EnsembleSpec::default()
    };
    let mut group = c.benchmark_group("rank_scan");
    group.sample_size(10);
    group.bench_function("wnmfk_k1_to_4_p5", |b| b.iter(|| rank_scan(&x, None, &spec, 1, 4).unwrap()));
    group.finish();
}

criterion_group!(benches, real_solvers, boolean_solvers, scan);
criterion_main!(benches);
