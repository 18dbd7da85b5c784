use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isocov::approx::{build_gram_matrix, select_min_m, MSearch};
use isocov::basis::{basis_all, basis_eval, basis_eval_beta};
use isocov::evaluation::study_sites;
use isocov::gp_core::build_cov_matrix;
use isocov::qp::solve_simplex_qp;
use isocov::{IsotropicCovariance, ParametricCovariance, QuadratureConfig, SieveCovariance};

fn basis(c: &mut Criterion) {
    let mut g = c.benchmark_group("basis");
    g.bench_function("product_k1_m200", |b| b.iter(|| basis_eval(1, 200, black_box(3.7))));
    g.bench_function("beta_k1_m200", |b| b.iter(|| basis_eval_beta(1, 200, black_box(3.7))));
    let mut out = vec![0.0; 200];
    g.bench_function("all_m200", |b| b.iter(|| basis_all(200, black_box(3.7), &mut out)));
    g.finish();
}

fn gram_and_qp(c: &mut Criterion) {
    let target = ParametricCovariance::matern(1.0, 1.0, 1.0).unwrap();
    let q = QuadratureConfig::default();
    let mut g = c.benchmark_group("approx");
    for m in [5usize, 20, 80] {
        let gram = build_gram_matrix(|h| target.continuous_part(h), m, &q).unwrap();
        g.bench_with_input(BenchmarkId::new("gram", m), &m, |b, &m| {
            b.iter(|| build_gram_matrix(|h| target.continuous_part(h), m, &q).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("simplex_qp", m), &gram, |b, gram| b.iter(|| solve_simplex_qp(gram).unwrap()));
    }
    let grid: Vec<usize> = (1..=30).collect();
    g.bench_function("select_min_m_matern", |b| {
        b.iter(|| select_min_m(|h| target.continuous_part(h), 0.05, &grid, &q, MSearch::Linear).unwrap())
    });
    g.finish();
}

fn covariance_matrix(c: &mut Criterion) {
    let mut g = c.benchmark_group("cov_matrix");
    let sieve = SieveCovariance::uniform(20, 1.5, 1.0, 0.0).unwrap();
    let matern = ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap();
    for n in [60usize, 200] {
        let coords = study_sites(n, 20.0, 1);
        g.bench_with_input(BenchmarkId::new("sieve_m20", n), &coords, |b, xy| b.iter(|| build_cov_matrix(&sieve, xy).unwrap()));
        g.bench_with_input(BenchmarkId::new("matern", n), &coords, |b, xy| b.iter(|| build_cov_matrix(&matern, xy).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, basis, gram_and_qp, covariance_matrix);
criterion_main!(benches);
