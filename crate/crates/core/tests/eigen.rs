use std::f64::consts::PI;
use std::sync::Arc;

use maxwell_rb::eigen::dense_oracle;
use maxwell_rb::*;

fn options(dims: [f64; 3]) -> SparseSolverOptions {
    SparseSolverOptions::from_first_eigenvalue(brick_eigenvalues(dims, 1)[0])
}

fn lowest(dims: [f64; 3], n: usize, k: usize) -> Vec<f64> {
    let pair = assemble(&CavityMesh::build(dims, [n, n, n]).unwrap()).unwrap();
    solve_sparse_gevp(&pair, k, &options(dims)).unwrap().values
}

#[test]
fn analytic_brick_spectrum() {
    let pi2 = PI * PI;
    let cube = brick_eigenvalues([1.0, 1.0, 1.0], 6);
    // (1,1,0) in three orientations, then (1,1,1) with two polarizations
    for v in &cube[..3] {
        assert!((v - 2.0 * pi2).abs() < 1e-12);
    }
    for v in &cube[3..5] {
        assert!((v - 3.0 * pi2).abs() < 1e-12);
    }
    let brick = brick_eigenvalues([1.0, 1.1, 1.2], 1)[0];
    assert!((brick - pi2 * (1.0 / 1.21 + 1.0 / 1.44)).abs() < 1e-12);
}

#[test]
fn unit_cube_converges_to_two_pi_squared() {
    let exact = 2.0 * PI * PI;
    let coarse = lowest([1.0, 1.0, 1.0], 4, 3);
    let fine = lowest([1.0, 1.0, 1.0], 8, 3);
    for v in &fine {
        assert!((v - exact).abs() / exact < 0.02, "{v}");
    }
    // triple eigenvalue: the three orientations are exchanged by symmetry
    assert!((fine[2] - fine[0]).abs() <= 1e-8 * exact);
    let ratio = (coarse[0] - exact).abs() / (fine[0] - exact).abs();
    assert!((3.0..=5.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn sparse_matches_dense_oracle() {
    let dims = [1.0, 1.1, 1.2];
    let mesh = CavityMesh::build(dims, [3, 3, 4]).unwrap();
    let pair = assemble(&mesh).unwrap();
    let dense = dense_oracle(&pair).unwrap();
    let physical = &dense.values[mesh.num_interior_vertices()..];

    let plain = solve_sparse_gevp(&pair, 6, &options(dims)).unwrap();
    let mut opts = options(dims);
    opts.deflation = Some(Arc::new(mesh.discrete_gradient().matrix));
    let deflated = solve_sparse_gevp(&pair, 6, &opts).unwrap();

    for sol in [&plain, &deflated] {
        assert_eq!(sol.len(), 6);
        for (x, y) in sol.values.iter().zip(physical) {
            assert!((x - y).abs() <= 1e-9 * y, "{x} vs {y}");
        }
        // B-orthonormal and free of gradient components
        let vtbv = sol.vectors.transpose() * pair.b.mul_dense(&sol.vectors);
        assert!((vtbv - nalgebra::DMatrix::identity(6, 6)).amax() <= 1e-8);
        let g = mesh.discrete_gradient().matrix;
        let overlap = g.transpose_mul_dense(&pair.b.mul_dense(&sol.vectors));
        assert!(overlap.amax() <= 1e-7, "gradient overlap {}", overlap.amax());
    }
    assert!(deflated.stats.iterations <= plain.stats.iterations);
}

#[test]
fn interpolated_family_hits_both_endpoints() {
    let m0 = CavityMesh::build([1.0, 1.1, 1.2], [3, 3, 3]).unwrap();
    let m1 = m0.with_dims([1.0, 1.1, 0.6]).unwrap();
    let system = ParametrizedSystem::from_meshes(&m0, &m1).unwrap();
    for (t, mesh) in [(0.0, &m0), (1.0, &m1)] {
        let direct = assemble(mesh).unwrap();
        let at = system.at(t).unwrap();
        assert!((at.a.to_dense() - direct.a.to_dense()).amax() <= 1e-12 * direct.a.max_abs());
        assert!((at.b.to_dense() - direct.b.to_dense()).amax() <= 1e-12 * direct.b.max_abs());
    }
    assert!(matches!(system.at(1.5), Err(Error::ParameterOutOfRange(_))));
}
