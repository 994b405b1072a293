use maxwell_rb::eigen::{count_zero_modes, dense_oracle};
use maxwell_rb::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brick(dims: [f64; 3], res: [usize; 3]) -> (CavityMesh, SystemPair, GaugeDecomposition) {
    let mesh = CavityMesh::build(dims, res).unwrap();
    let pair = assemble(&mesh).unwrap();
    let gauge = GaugeDecomposition::build(&mesh.discrete_gradient()).unwrap();
    (mesh, pair, gauge)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let max = s.max();
    s.iter().filter(|&&v| v > 1e-10 * max).count()
}

#[test]
fn gradient_spans_the_nullspace() {
    for res in [[2, 2, 2], [3, 2, 4], [3, 3, 3]] {
        let (mesh, pair, gauge) = brick([1.0, 1.3, 0.8], res);
        let g = mesh.discrete_gradient().matrix.to_dense();
        let nv = mesh.num_interior_vertices();
        assert_eq!(g.ncols(), nv);
        assert_eq!(numerical_rank(&g), nv, "rank G at {res:?}");
        assert!((pair.a.to_dense() * &g).amax() <= 1e-12);

        let spectrum = dense_oracle(&pair).unwrap();
        assert_eq!(count_zero_modes(&spectrum.values, 1e-10), nv, "zero modes at {res:?}");
        assert_eq!(gauge.tree_len(), nv);
        assert_eq!(gauge.tree_len() + gauge.cotree_len(), pair.dim());
    }
}

#[test]
fn cotree_system_keeps_the_physical_spectrum() {
    for res in [[2, 2, 2], [3, 3, 3]] {
        let (mesh, pair, gauge) = brick([1.0, 1.1, 1.2], res);
        let full = dense_oracle(&pair).unwrap();
        let physical: Vec<f64> = full.values[mesh.num_interior_vertices()..].to_vec();

        let pencil = GaugedPencil::new(pair, &gauge).unwrap();
        let cs = pencil.cotree_system().unwrap();
        let gauged = solve_dense_gevp(&cs.a_hat, &cs.b_hat).unwrap();
        assert_eq!(gauged.len(), physical.len());
        for (x, y) in gauged.values.iter().zip(&physical) {
            assert!((x - y).abs() <= 1e-8 * y, "{x} vs {y} at {res:?}");
        }
        // no zero modes survive the gauge
        assert!(gauged.values[0] > 1.0);
    }
}

#[test]
fn frozen_h_gives_the_same_spectrum() {
    let m0 = CavityMesh::build([1.0, 1.1, 1.2], [3, 3, 3]).unwrap();
    let m1 = m0.with_dims([1.0, 1.1, 0.6]).unwrap();
    let system = ParametrizedSystem::from_meshes(&m0, &m1).unwrap();
    let gauge = GaugeDecomposition::build(&m0.discrete_gradient()).unwrap();
    let pair = system.at(0.7).unwrap();
    let own = GaugedPencil::new(pair.clone(), &gauge).unwrap();
    let frozen = GaugedPencil::with_frozen_h(pair, &gauge, &system.endpoint0().a).unwrap();
    let a = own.cotree_system().unwrap();
    let b = frozen.cotree_system().unwrap();
    let ea = solve_dense_gevp(&a.a_hat, &a.b_hat).unwrap().values;
    let eb = solve_dense_gevp(&b.a_hat, &b.b_hat).unwrap().values;
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x - y).abs() <= 1e-8 * y);
    }
}

#[test]
fn physical_eigenvectors_project_consistently() {
    let (mesh, pair, gauge) = brick([1.0, 1.1, 1.2], [3, 3, 3]);
    let full = dense_oracle(&pair).unwrap();
    let nv = mesh.num_interior_vertices();
    let v = full.vectors.columns(nv, 6).into_owned();
    let pencil = GaugedPencil::new(pair, &gauge).unwrap();
    for method in [ProjectionMethod::CotreeBlock, ProjectionMethod::DenseQr] {
        let (v_hat, residuals) = pencil.project_with_residuals(&v, method).unwrap();
        assert!(residuals.iter().all(|&r| r <= 1e-9), "{method:?}: {residuals:?}");
        // upscaling recovers the eigenvectors themselves
        let back = pencil.upscale(&v_hat).unwrap();
        assert!((&back - &v).amax() <= 1e-9 * v.amax());
    }
}

#[test]
fn projection_methods_agree() {
    let (_, pair, gauge) = brick([1.0, 1.0, 1.0], [3, 3, 2]);
    let pencil = GaugedPencil::new(pair, &gauge).unwrap();
    let v_hat = random_matrix(pencil.cotree_dim(), 4, 11);
    let v = pencil.upscale(&v_hat).unwrap();
    let block = pencil.project_to_cotree(&v, ProjectionMethod::CotreeBlock).unwrap();
    let qr = pencil.project_to_cotree(&v, ProjectionMethod::DenseQr).unwrap();
    assert!((&block - &qr).amax() <= 1e-10 * qr.amax());
}

#[test]
fn gradients_are_rejected() {
    let (mesh, pair, gauge) = brick([1.0, 1.0, 1.0], [3, 3, 3]);
    let g = mesh.discrete_gradient().matrix.to_dense();
    let pencil = GaugedPencil::new(pair, &gauge).unwrap();
    let v = g.columns(0, 2).into_owned();
    assert!(matches!(
        pencil.project_to_cotree(&v, ProjectionMethod::CotreeBlock),
        Err(Error::IllPosedProjection { column: 0, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn project_inverts_upscale(seed in any::<u64>(), cols in 1usize..5, t in 0.0f64..=1.0) {
        let m0 = CavityMesh::build([1.0, 1.2, 0.9], [2, 3, 3]).unwrap();
        let m1 = m0.with_dims([1.4, 1.0, 0.7]).unwrap();
        let system = ParametrizedSystem::from_meshes(&m0, &m1).unwrap();
        let gauge = GaugeDecomposition::build(&m0.discrete_gradient()).unwrap();
        let pencil = GaugedPencil::new(system.at(t).unwrap(), &gauge).unwrap();
        let v_hat = random_matrix(pencil.cotree_dim(), cols, seed);
        let v = pencil.upscale(&v_hat).unwrap();
        let (back, residuals) = pencil.project_with_residuals(&v, ProjectionMethod::CotreeBlock).unwrap();
        prop_assert!((&back - &v_hat).amax() <= 1e-9 * v_hat.amax());
        prop_assert!(residuals.iter().all(|&r| r <= 1e-12));
    }

    #[test]
    fn tree_is_a_spanning_forest(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5) {
        let mesh = CavityMesh::build([1.0, 1.0, 1.0], [nx, ny, nz]).unwrap();
        let grad = mesh.discrete_gradient();
        let gauge = GaugeDecomposition::build(&grad).unwrap();
        prop_assert_eq!(gauge.tree_len(), mesh.num_interior_vertices());
        let mut all: Vec<usize> = gauge.tree.iter().chain(&gauge.cotree).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..mesh.num_free_edges()).collect::<Vec<_>>());
        if gauge.tree_len() > 0 {
            // G restricted to tree rows is square and nonsingular
            let gt = gauge.tree_gradient(&grad);
            prop_assert_eq!(numerical_rank(&gt), gauge.tree_len());
        }
    }
}
