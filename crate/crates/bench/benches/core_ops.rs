//! Benchmarks for the numerical kernels that dominate a sequential run:
//! value solves, gradients, projections, and one full stopping check.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use policy_testing::instances;
use policy_testing::kl::{project_global_kl, project_kl_ball};
use policy_testing::mdp::{value_bundle, visitation, Start};
use policy_testing::reversed::{reversed_gradient, ReversedView};
use policy_testing::solver::{nested_pgd, SolverConfig};

fn bench_value_bundle(c: &mut Criterion) {
    let (two, _) = instances::two_state();
    let (five, _) = instances::five_state();
    c.bench_function("value_bundle/two_state", |b| {
        b.iter(|| value_bundle(black_box(two.kernel()), black_box(&two)).unwrap())
    });
    c.bench_function("value_bundle/five_state", |b| {
        b.iter(|| value_bundle(black_box(five.kernel()), black_box(&five)).unwrap())
    });
}

fn bench_visitation(c: &mut Criterion) {
    let (five, _) = instances::five_state();
    c.bench_function("visitation/five_state", |b| {
        b.iter(|| {
            visitation(
                black_box(five.kernel()),
                black_box(&five),
                Start::InitialDistribution,
            )
            .unwrap()
        })
    });
}

fn bench_gradient(c: &mut Criterion) {
    let (five, _) = instances::five_state();
    let view = ReversedView::new(&five);
    c.bench_function("reversed_gradient/five_state", |b| {
        b.iter(|| reversed_gradient(black_box(five.kernel()), black_box(&view)).unwrap())
    });
}

fn bench_projections(c: &mut Criterion) {
    let p_row = [0.7, 0.2, 0.1];
    let x_row = [0.95, 0.03, 0.02];
    c.bench_function("project_kl_ball/3", |b| {
        b.iter(|| project_kl_ball(black_box(&x_row), black_box(&p_row), 0.02, 1e-10).unwrap())
    });

    let (two, w) = instances::two_state();
    let x: Vec<f64> = two.kernel().as_slice().iter().map(|v| v + 0.07).collect();
    c.bench_function("project_global_kl/two_state", |b| {
        b.iter(|| {
            project_global_kl(
                black_box(&x),
                black_box(two.kernel()),
                black_box(&w),
                0.05,
                1e-10,
            )
            .unwrap()
        })
    });
}

fn bench_stopping_check(c: &mut Criterion) {
    let (two, w) = instances::two_state();
    let config = SolverConfig::practical();
    c.bench_function("nested_pgd/practical/two_state", |b| {
        b.iter(|| {
            nested_pgd(
                black_box(two.kernel()),
                black_box(&two),
                black_box(0.1),
                black_box(&w),
                &config,
            )
            .unwrap()
        })
    });
    let (three, w3) = instances::three_state();
    c.bench_function("nested_pgd/practical/three_state", |b| {
        b.iter(|| {
            nested_pgd(
                black_box(three.kernel()),
                black_box(&three),
                black_box(0.1),
                black_box(&w3),
                &config,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_value_bundle,
    bench_visitation,
    bench_gradient,
    bench_projections,
    bench_stopping_check
);
criterion_main!(benches);
