use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use semabridge::baselines::vanilla_direct_fuse;
use semabridge::bridge::fuse_forward_traced;
use semabridge::degradation::{degrade, gaussian_blur, DegradationLevel, Image8};
use semabridge::tensor::{conv2d, dct2, idct2};
use semabridge::{Rng, Tensor};
use semabridge_bench::{baseline_params, fusion_problem};

// Bridged fusion grows linearly in H·W, direct attention quadratically.
fn fusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("fusion");
    let baseline = baseline_params(2);
    for side in [8usize, 16, 24] {
        let p = fusion_problem(side, 1);
        group.throughput(Throughput::Elements((side * side) as u64));
        group.bench_with_input(BenchmarkId::new("bridge", side), &p, |b, p| {
            b.iter(|| fuse_forward_traced(black_box(&p.x_rgb), &p.x_ir, &p.text, &p.params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("direct", side), &p, |b, p| {
            b.iter(|| vanilla_direct_fuse(black_box(&p.x_rgb), &p.x_ir, &baseline).unwrap())
        });
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("dct");
    let mut rng = Rng::new(3);
    for side in [16usize, 32] {
        let x = Tensor::randn(&[8, side, side], 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::new("round_trip", side), &x, |b, x| {
            b.iter(|| idct2(&dct2(black_box(x)).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let x = Tensor::randn(&[32, 24, 24], 1.0, &mut rng);
    let k = Tensor::randn(&[16, 32, 3, 3], 0.1, &mut rng);
    c.bench_function("conv2d_3x3_32to16_24x24", |b| b.iter(|| conv2d(black_box(&x), &k, 1).unwrap()));
}

fn degradation(c: &mut Criterion) {
    let img = Image8::filled(3, 96, 128, 128).unwrap();
    c.bench_function("gaussian_blur_k9", |b| b.iter(|| gaussian_blur(black_box(&img), 9).unwrap()));
    let level = DegradationLevel::standard(10).unwrap();
    c.bench_function("degrade_level10", |b| {
        let mut rng = Rng::new(5);
        b.iter(|| degrade(black_box(&img), &level, &mut rng).unwrap())
    });
}

criterion_group!(benches, fusion, spectral, convolution, degradation);
criterion_main!(benches);
