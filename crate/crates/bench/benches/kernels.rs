use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use landscape::certify::default_radii;
use landscape::diff::HESSIAN_FD_STEP;
use landscape::{compute_bd, gradient, hessian_fd, monotone_descent_to_global, probe_random_directions, PathOptions};
use landscape_bench::{random_case, trained_student};
use std::hint::black_box;

fn bench_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    for dims in [vec![2, 1, 1, 1], vec![2, 21, 21, 1], vec![2, 64, 64, 1]] {
        let (net, data) = random_case(&dims, 20, 1);
        group.bench_with_input(BenchmarkId::from_parameter(net.num_params()), &net, |b, net| {
            b.iter(|| gradient(black_box(net), &data).unwrap())
        });
    }
    group.finish();
}

fn bench_hessian_fd(c: &mut Criterion) {
    let mut group = c.benchmark_group("hessian_fd");
    group.sample_size(10);
    for dims in [vec![2, 1, 1, 1], vec![2, 5, 5, 1], vec![2, 21, 21, 1]] {
        let (net, data) = random_case(&dims, 20, 2);
        group.bench_with_input(BenchmarkId::from_parameter(net.num_params()), &net, |b, net| {
            b.iter(|| hessian_fd(black_box(net), &data, HESSIAN_FD_STEP).unwrap())
        });
    }
    group.finish();
}

fn bench_compute_bd(c: &mut Criterion) {
    let (net, data) = trained_student();
    c.bench_function("compute_bd/2-1-1-1", |b| b.iter(|| compute_bd(black_box(&net), &data, 1, 0, true).unwrap()));
    let (wide, data) = random_case(&[2, 21, 21, 1], 20, 3);
    c.bench_function("compute_bd/2-21-21-1", |b| b.iter(|| compute_bd(black_box(&wide), &data, 2, 0, true).unwrap()));
}

fn bench_probe(c: &mut Criterion) {
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    let (net, data) = random_case(&[2, 21, 21, 1], 20, 4);
    let radii = default_radii();
    for k in [64, 512] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| probe_random_directions(black_box(&net), &data, k, &radii, 2024).unwrap())
        });
    }
    group.finish();
}

fn bench_path(c: &mut Criterion) {
    let mut group = c.benchmark_group("path");
    group.sample_size(10);
    let (net, data) = random_case(&[2, 21, 21, 1], 20, 5);
    for steps in [64, 256] {
        let opts = PathOptions { steps, ..PathOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(steps), &opts, |b, opts| {
            b.iter(|| monotone_descent_to_global(black_box(&net), &data, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gradient, bench_hessian_fd, bench_compute_bd, bench_probe, bench_path);
criterion_main!(benches);
