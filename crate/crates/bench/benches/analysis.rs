use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relu_interp::fixtures::{triangle_data, triangle_faces};
use relu_interp::{
    build_interp_matrix, build_polytope_classifier, collapse_sets, explore_decompositions, layerwise_sparsity,
    rank_and_singularity, solve_overparam, split_classes, trace_route, train_full_batch, BlockTriangularSystem,
    ConvexPolytope, OverparamOptions, TrainConfig, DEFAULT_RANK_TOL, DEFAULT_TAU_ACT,
};
use relu_interp_bench::{arrangement, dense_system, random_problem};

fn interp_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("interp_matrix");
    for points in [64, 256, 1024] {
        let (net, data) = random_problem(4, &[32, 32], points, 1);
        group.bench_with_input(BenchmarkId::new("build", points), &points, |b, _| {
            b.iter(|| build_interp_matrix(black_box(&net), black_box(&data), 1, DEFAULT_TAU_ACT).unwrap())
        });
        let m = build_interp_matrix(&net, &data, 1, DEFAULT_TAU_ACT).unwrap();
        group.bench_with_input(BenchmarkId::new("rank", points), &points, |b, _| {
            b.iter(|| rank_and_singularity(black_box(m.values()), DEFAULT_RANK_TOL))
        });
    }
    group.finish();
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    for blocks in [4, 16, 64] {
        let inst = arrangement(2, blocks, 3);
        let m = build_interp_matrix(&inst.network, &inst.data, 0, DEFAULT_TAU_ACT).unwrap();
        let y = inst.data.targets().column(0).into_owned();
        group.bench_with_input(BenchmarkId::new("triangular", blocks), &blocks, |b, _| {
            b.iter(|| {
                BlockTriangularSystem::from_matrix(black_box(m.values()), &inst.block_sizes, &y)
                    .unwrap()
                    .solve(DEFAULT_RANK_TOL)
                    .unwrap()
            })
        });
    }
    let (m, y) = dense_system(8, 16, 5);
    let opts = OverparamOptions { stop_at_first: false, max_combos: 2000, ..OverparamOptions::default() };
    group.bench_function("overparam_8x16_2000", |b| b.iter(|| solve_overparam(black_box(&m), &y, &opts).unwrap()));
    group.finish();
}

fn routes(c: &mut Criterion) {
    let polytope = ConvexPolytope::new(triangle_faces()).unwrap();
    let data = triangle_data();
    let (stars, os) = split_classes(&data);
    c.bench_function("classifier_triangle", |b| {
        b.iter(|| build_polytope_classifier(black_box(&polytope), &stars, &os, DEFAULT_TAU_ACT).unwrap())
    });
    let net = build_polytope_classifier(&polytope, &stars, &os, DEFAULT_TAU_ACT).unwrap().network;
    let route = trace_route(&net, &data, &[0, 1], DEFAULT_TAU_ACT).unwrap();
    c.bench_function("collapse_sets_triangle", |b| {
        b.iter(|| collapse_sets(black_box(&net), &route, &data, DEFAULT_TAU_ACT).unwrap())
    });
    let (deep, points) = random_problem(3, &[24, 24, 24, 24], 512, 7);
    c.bench_function("layerwise_sparsity_4x24_512", |b| {
        b.iter(|| layerwise_sparsity(black_box(&deep), &points, DEFAULT_TAU_ACT).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let (net, data) = random_problem(2, &[16, 16], 128, 9);
    let config = TrainConfig { learning_rate: 0.01, steps: 50, record_every: 50, ..TrainConfig::default() };
    c.bench_function("train_50_steps", |b| b.iter(|| train_full_batch(black_box(&net), &data, &config).unwrap()));
    c.bench_function("explore_2_cuts_200", |b| {
        b.iter(|| explore_decompositions(black_box(&data), 2, 200, 1).unwrap())
    });
}

criterion_group!(benches, interp_matrix, solvers, routes, training);
criterion_main!(benches);
