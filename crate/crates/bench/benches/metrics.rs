use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use medfuse_bench::gray_image;
use medfuse_core::metrics::{entropy, fmi, fsim, fusion_metrics, psnr, ssim};

fn metrics(c: &mut Criterion) {
    let (a, b, f) = (gray_image(128, 1), gray_image(128, 4), gray_image(128, 2));
    let mut group = c.benchmark_group("metrics 128x128");
    group.bench_function("psnr", |bn| bn.iter(|| psnr(black_box(&a), black_box(&f)).unwrap()));
    group.bench_function("ssim", |bn| bn.iter(|| ssim(black_box(&a), black_box(&f)).unwrap()));
    group.bench_function("fsim", |bn| bn.iter(|| fsim(black_box(&a), black_box(&f)).unwrap()));
    group.bench_function("fmi", |bn| bn.iter(|| fmi(black_box(&a), black_box(&b), black_box(&f)).unwrap()));
    group.bench_function("entropy", |bn| bn.iter(|| entropy(black_box(&f))));
    group.bench_function("all five", |bn| {
        bn.iter(|| fusion_metrics(black_box(&a), black_box(&b), black_box(&f)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
