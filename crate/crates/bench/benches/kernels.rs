use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lma_bench::quadratic;
use lma_core::barriers::ma_dirichlet_solve;
use lma_core::geometry::{NodeField, QuadraticForm};
use lma_core::normalization::john_normalize;
use lma_core::sections::section;
use lma_core::sliding::{slide_paraboloid, SlideOptions};
use lma_core::{CellSet, Grid};

fn sections(c: &mut Criterion) {
    let mut g = c.benchmark_group("section");
    for nodes in [64, 128, 256] {
        let u = quadratic(1.2, nodes);
        g.bench_with_input(BenchmarkId::from_parameter(nodes), &u, |b, u| {
            b.iter(|| section(u, black_box(&[0.1, -0.05]), 0.2).unwrap())
        });
    }
    g.finish();
}

fn john(c: &mut Criterion) {
    let u = quadratic(1.2, 128);
    let s = section(&u, &[0.0, 0.0], 0.3).unwrap();
    c.bench_function("john_normalize/128", |b| b.iter(|| john_normalize(u.grid(), black_box(&s)).unwrap()));
}

fn slide(c: &mut Criterion) {
    let u = quadratic(1.5, 101);
    let s = section(&u, &[0.0, 0.0], 0.8).unwrap();
    let v = NodeField::from_function(u.grid(), Arc::new(QuadraticForm::scaled(2, 1.0))).unwrap();
    let opts = SlideOptions { refine: true, jacobian_fd: false };
    c.bench_function("slide_paraboloid/101", |b| {
        b.iter(|| slide_paraboloid(&u, &v, black_box(&[0.2, -0.1]), 2.0, &s, opts).unwrap())
    });
}

fn monge_ampere(c: &mut Criterion) {
    let mut g = c.benchmark_group("ma_dirichlet_solve");
    g.sample_size(10);
    for nodes in [25, 49] {
        let grid = Grid::centered(2, 1.2, nodes).unwrap();
        let disk = CellSet::from_mask(&grid.sample(|p| p[0] * p[0] + p[1] * p[1]).iter().map(|r| *r < 1.0).collect::<Vec<_>>());
        let rhs = vec![1.0; grid.len()];
        g.bench_with_input(BenchmarkId::from_parameter(nodes), &(grid, disk, rhs), |b, (grid, disk, rhs)| {
            b.iter(|| ma_dirichlet_solve(grid, disk, rhs, 1e-9).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sections, john, slide, monge_ampere);
criterion_main!(benches);
