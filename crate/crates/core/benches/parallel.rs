use std::hint::black_box;

use calibkit::exec::Exec;
use calibkit::metrics::{adaptive_ece_with, bin_sweep_with, classwise_ece_with, AceSpec, PredictionSet, DEFAULT_SWEEP};
use calibkit::smoothcal::{kde_ece_with, sece_hard_with, KernelSpec, DEFAULT_KDE_GRID};
use calibkit::tensor::Tensor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

fn predictions(n: usize, k: usize) -> PredictionSet {
    let labels = (0..n).map(|i| i % k).collect();
    PredictionSet::from_logits(random(n, k, 1), labels).unwrap()
}

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn smooth(c: &mut Criterion) {
    let preds = predictions(2000, 10);
    let kernel = KernelSpec::gaussian(0.01).unwrap();
    let mut group = c.benchmark_group("smooth");
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::new("sece", name), |b| {
            b.iter(|| sece_hard_with(black_box(&preds), kernel, exec))
        });
        group.bench_function(BenchmarkId::new("kde_ece", name), |b| {
            b.iter(|| kde_ece_with(black_box(&preds), kernel, DEFAULT_KDE_GRID, exec).unwrap())
        });
    }
    group.finish();
}

fn binned(c: &mut Criterion) {
    let preds = predictions(20_000, 10);
    let mut group = c.benchmark_group("binned");
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::new("classwise_ece", name), |b| {
            b.iter(|| classwise_ece_with(black_box(&preds), 15, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("ace", name), |b| {
            b.iter(|| adaptive_ece_with(black_box(&preds), AceSpec::new(15), exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("bin_sweep", name), |b| {
            b.iter(|| bin_sweep_with(black_box(&preds), &DEFAULT_SWEEP, exec).unwrap())
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let a = random(256, 256, 2);
    let b = random(256, 256, 3);
    let mut group = c.benchmark_group("matmul");
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::new("256", name), |bench| {
            bench.iter(|| black_box(&a).matmul_with(black_box(&b), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, smooth, binned, matmul);
criterion_main!(benches);
