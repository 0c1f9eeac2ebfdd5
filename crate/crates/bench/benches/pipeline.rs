use criterion::{black_box, criterion_group, criterion_main, Criterion};

use csbss_core::neural::{build_separator, build_to_budget};
use csbss_core::sensing::SensingMatrix;
use csbss_core::sparse_recovery::omp_reconstruct;

fn bench_compress(c: &mut Criterion) {
    let phi = SensingMatrix::generate(1, 784, 0.5).unwrap();
    let x: Vec<f64> = (0..784).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("compress_392x784", |b| {
        b.iter(|| phi.compress(black_box(&x)).unwrap())
    });
}

fn bench_omp(c: &mut Criterion) {
    let phi = SensingMatrix::generate(2, 256, 0.25).unwrap();
    let mut x = vec![0.0; 256];
    for (i, v) in [(3usize, 1.0), (47, -0.6), (120, 0.8), (200, 0.4)] {
        x[i] = v;
    }
    let y = phi.compress(&x).unwrap();
    c.bench_function("omp_4sparse_64x256", |b| {
        b.iter(|| omp_reconstruct(black_box(&phi), black_box(&y), 4, 1e-9).unwrap())
    });
}

fn bench_separate(c: &mut Criterion) {
    let plan = build_to_budget(392, 64, 400_000).unwrap();
    let model = build_separator(&plan, 392, 64, 7);
    let y: Vec<f64> = (0..392).map(|i| (i as f64 * 0.11).cos()).collect();
    c.bench_function("separator_forward_392", |b| {
        b.iter(|| model.separate(black_box(&y)).unwrap())
    });
}

criterion_group!(benches, bench_compress, bench_omp, bench_separate);
criterion_main!(benches);
