//! Sequential against rayon-parallel execution of the data-parallel phases,
//! plus the per-parameter kernels they are built from.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxwell_rb::factor::{Definiteness, SparseLdl};
use maxwell_rb::rb::*;
use maxwell_rb::*;
use nalgebra::DMatrix;

fn problem(res: usize) -> RbProblem {
    let m0 = CavityMesh::build([1.0, 1.1, 1.2], [res, res, res]).unwrap();
    let m1 = m0.with_dims([1.0, 1.1, 0.6]).unwrap();
    RbProblem::from_meshes(&m0, &m1).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", true), ("parallel", false)]
}

fn snapshots(c: &mut Criterion) {
    let p = problem(5);
    let ts = uniform_grid(8);
    let mut g = c.benchmark_group("snapshots");
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::new("mixed", name), |b| {
            par::set_sequential(seq);
            b.iter(|| collect_snapshots(&p, &ts, 5).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn build(c: &mut Criterion) {
    let p = problem(5);
    let sets = TrainingSets::new(8, 20, 1);
    let settings = RbSettings { k: 5, n_init: 5, n_max: 20, tol: 1e-10 };
    let mut g = c.benchmark_group("build_basis");
    for (name, seq) in modes() {
        for mode in [GaugeMode::Mixed, GaugeMode::Classical] {
            g.bench_function(BenchmarkId::new(format!("{mode:?}").to_lowercase(), name), |b| {
                par::set_sequential(seq);
                b.iter(|| build_basis(&p, &sets, &settings, mode).unwrap())
            });
        }
    }
    par::set_sequential(false);
    g.finish();
}

fn error_sweep(c: &mut Criterion) {
    let p = problem(5);
    let sets = TrainingSets::new(8, 20, 1);
    let settings = RbSettings { k: 5, n_init: 5, n_max: 20, tol: 1e-10 };
    let basis = build_basis(&p, &sets, &settings, GaugeMode::Mixed).unwrap().basis;
    let ts = random_set(20, 4);
    let reference = reference_eigenvalues(&p, &ts, 5).unwrap();
    let mut g = c.benchmark_group("error_by_basis_size");
    for (name, seq) in modes() {
        g.bench_function(name, |b| {
            par::set_sequential(seq);
            b.iter(|| error_by_basis_size(&p, &basis, &ts, &reference, 5).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let p = problem(6);
    let pair = p.system.at(0.3).unwrap();
    let z = DMatrix::from_fn(p.cotree_dim(), 6, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let pencil = p.pencil(0.3).unwrap();
    let eval = reduced_matrices_mixed(&pencil, &z).unwrap();
    let mut g = c.benchmark_group("kernels");
    g.bench_function("mass_factorization", |b| {
        b.iter(|| SparseLdl::factorize_with(pair.symbolic().clone(), &pair.b, Definiteness::Positive).unwrap())
    });
    g.bench_function("reduced_evaluation", |b| {
        b.iter(|| {
            let pencil = p.pencil(0.3).unwrap();
            reduced_matrices_mixed(&pencil, &z).unwrap()
        })
    });
    g.bench_function("reduced_evp", |b| b.iter(|| eval.system.solve(5).unwrap()));
    g.bench_function("full_evp", |b| b.iter(|| solve_sparse_gevp(&pair, 5, &p.solver).unwrap()));
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = snapshots, build, error_sweep, kernels
}
criterion_main!(benches);
