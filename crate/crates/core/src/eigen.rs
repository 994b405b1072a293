//! Generalized symmetric eigensolvers and the SPD solve contract.
//!
//! The sparse solver runs a thick-restarted block Krylov iteration on the
//! shift-inverted operator S = (A − σB)⁻¹B, which is self-adjoint in the B
//! inner product. Each Ritz value θ maps back to λ = σ + 1/θ; the gradient
//! nullspace of the curl-curl operator lands at θ = −1/σ and is filtered out
//! by the cutoff, so only physical modes are returned.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::SystemPair;
use crate::error::{Error, Result};
use crate::factor::{Definiteness, SparseLdl};
use crate::sparse::{CsrMatrix, UnionPattern};

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub operator_applications: usize,
    pub restarts: usize,
}

/// Eigenpairs sorted by ascending eigenvalue. Vectors are stored as columns.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub residual_norms: Vec<f64>,
    pub b_normalized: bool,
    pub stats: SolverStats,
}

impl EigenSolution {
    pub fn empty(n: usize) -> Self {
        Self {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
            residual_norms: Vec::new(),
            b_normalized: true,
            stats: SolverStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// Keeps the first `k` pairs.
    pub fn truncate(&mut self, k: usize) {
        let k = k.min(self.values.len());
        self.values.truncate(k);
        self.residual_norms.truncate(k);
        self.vectors = self.vectors.columns(0, k).into_owned();
    }
}

/// Full spectrum of a dense pencil via Cholesky reduction to a standard
/// symmetric problem. Vectors come back B-orthonormal.
pub fn solve_dense_gevp(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<EigenSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "dense pencil {}x{} / {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if n == 0 {
        return Ok(EigenSolution::empty(0));
    }
    let chol = b.clone().cholesky().ok_or(Error::NotPositiveDefinite { row: 0, pivot: f64::NAN })?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let mut c = l.solve_lower_triangular(a).expect("nonsingular cholesky factor");
    c = l.solve_lower_triangular(&c.transpose()).expect("nonsingular cholesky factor");
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let vectors = l.transpose().solve_upper_triangular(&y).expect("nonsingular cholesky factor");
    let av = a * &vectors;
    let bv = b * &vectors;
    let residual_norms = (0..n).map(|i| (av.column(i) - bv.column(i) * values[i]).norm()).collect();
    Ok(EigenSolution { values, vectors, residual_norms, b_normalized: true, stats: SolverStats::default() })
}

/// Brute-force reference: the full dense spectrum of a sparse pencil.
pub fn dense_oracle(pair: &SystemPair) -> Result<EigenSolution> {
    solve_dense_gevp(&pair.a.to_dense(), &pair.b.to_dense())
}

/// Number of eigenvalues with |λ| ≤ `rel`·max|λ|.
pub fn count_zero_modes(values: &[f64], rel: f64) -> usize {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values.iter().filter(|v| v.abs() <= rel * max).count()
}

pub fn factorize_spd(b: &CsrMatrix) -> Result<SparseLdl> {
    SparseLdl::factorize(b, Definiteness::Positive)
}

/// Solves `B X = rhs` for every column of `rhs` in one pass.
pub fn solve_spd(factor: &SparseLdl, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    factor.solve_block(rhs)
}

/// Projector onto the B-orthogonal complement of range(G), used for optional
/// nullspace deflation inside the Krylov iteration.
#[derive(Debug, Clone)]
pub struct GradientDeflation {
    g: CsrMatrix,
    b: CsrMatrix,
    gram: SparseLdl,
}

impl GradientDeflation {
    pub fn new(g: &CsrMatrix, b: &CsrMatrix) -> Result<Self> {
        if g.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch(format!("G has {} rows, B has {}", g.nrows(), b.nrows())));
        }
        // GᵀBG entry by entry from the nonzeros of B
        let mut trip = Vec::new();
        for (i, j, bij) in b.triplets() {
            let (ci, vi) = g.row(i);
            let (cj, vj) = g.row(j);
            for (&u, &gu) in ci.iter().zip(vi) {
                for (&v, &gv) in cj.iter().zip(vj) {
                    trip.push((u, v, gu * bij * gv));
                }
            }
        }
        let gram = CsrMatrix::from_triplets(g.ncols(), g.ncols(), &trip);
        let gram = SparseLdl::factorize(&gram, Definiteness::Positive)?;
        Ok(Self { g: g.clone(), b: b.clone(), gram })
    }

    /// x ← x − G (GᵀBG)⁻¹ GᵀB x for each column.
    pub fn apply(&self, x: &mut DMatrix<f64>) {
        if self.g.ncols() == 0 {
            return;
        }
        let coeff = self.gram.solve_block(&self.g.transpose_mul_dense(&self.b.mul_dense(x)));
        *x -= self.g.mul_dense(&coeff);
    }
}

#[derive(Debug, Clone)]
pub struct SparseSolverOptions {
    /// Spectral shift σ, placed just below the first physical eigenvalue.
    pub shift: f64,
    /// Eigenvalues at or below this value count as gradient (spurious) modes.
    pub lambda_cut: f64,
    pub tol: f64,
    pub max_iterations: usize,
    /// Krylov window; `None` means 2K + 10.
    pub window: Option<usize>,
    pub block_size: usize,
    pub seed: u64,
    /// Discrete gradient to deflate against inside the iteration (off when
    /// `None`).
    pub deflation: Option<Arc<CsrMatrix>>,
}

impl SparseSolverOptions {
    /// Defaults derived from an estimate of the first physical eigenvalue:
    /// σ = 0.9·λ₁ and cutoff 0.1·λ₁.
    pub fn from_first_eigenvalue(lambda1: f64) -> Self {
        Self {
            shift: 0.9 * lambda1,
            lambda_cut: 0.1 * lambda1,
            tol: 1e-10,
            max_iterations: 500,
            window: None,
            block_size: 3,
            seed: 0x5eed,
            deflation: None,
        }
    }
}

/// The `k` smallest eigenpairs of (A, B) with λ > `lambda_cut`.
pub fn solve_sparse_gevp(pair: &SystemPair, k: usize, opts: &SparseSolverOptions) -> Result<EigenSolution> {
    let n = pair.dim();
    if k == 0 {
        return Ok(EigenSolution::empty(n));
    }
    let shifted = |sigma: f64| -> Result<SparseLdl> {
        let m = UnionPattern::new(&pair.a, &pair.b)?.linear(1.0, -sigma);
        SparseLdl::factorize_with(pair.symbolic().clone(), &m, Definiteness::Indefinite)
    };
    let mut sigma = opts.shift;
    let factor = match shifted(sigma) {
        Ok(f) => f,
        Err(Error::ZeroPivot { .. }) => {
            sigma *= 1.0 + 1e-3;
            shifted(sigma)?
        }
        Err(e) => return Err(e),
    };
    let op = ShiftInvert { factor, b: &pair.b, sigma };
    let deflation = match &opts.deflation {
        Some(g) => Some(GradientDeflation::new(g, &pair.b)?),
        None => None,
    };
    let mut sol = krylov_schur(&op, n, k, opts, deflation.as_ref())?;
    // Rayleigh quotients and true residuals in the original pencil
    let x = &sol.vectors;
    let ax = pair.a.mul_dense(x);
    let bx = pair.b.mul_dense(x);
    let mut pairs: Vec<(f64, usize)> = (0..x.ncols())
        .map(|i| {
            let num = x.column(i).dot(&ax.column(i));
            let den = x.column(i).dot(&bx.column(i));
            (num / den, i)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut vectors = DMatrix::zeros(n, pairs.len());
    let mut residual_norms = Vec::with_capacity(pairs.len());
    for (c, &(lam, i)) in pairs.iter().enumerate() {
        let norm = x.column(i).dot(&bx.column(i)).sqrt();
        vectors.set_column(c, &(x.column(i) / norm));
        residual_norms.push((ax.column(i) - bx.column(i) * lam).norm() / norm);
    }
    sol.values = pairs.iter().map(|p| p.0).collect();
    sol.vectors = vectors;
    sol.residual_norms = residual_norms;
    Ok(sol)
}

struct ShiftInvert<'a> {
    factor: SparseLdl,
    b: &'a CsrMatrix,
    sigma: f64,
}

impl ShiftInvert<'_> {
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve_block(&self.b.mul_dense(x))
    }

    fn to_lambda(&self, theta: f64) -> f64 {
        if theta == 0.0 {
            f64::INFINITY
        } else {
            self.sigma + 1.0 / theta
        }
    }
}

fn b_dot(b: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    b.mul_vec(x).iter().zip(y).map(|(a, c)| a * c).sum()
}

/// B-orthogonalizes the columns of `block` against `basis` (with `b_basis`
/// = B·basis) and among themselves; dependent columns are dropped.
fn orthonormalize_block(
    b: &CsrMatrix,
    basis: &DMatrix<f64>,
    b_basis: &DMatrix<f64>,
    block: DMatrix<f64>,
) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut kept_b: Vec<DVector<f64>> = Vec::new();
    for c in 0..block.ncols() {
        let mut v = block.column(c).into_owned();
        let orig = b_dot(b, v.as_slice(), v.as_slice()).max(0.0).sqrt();
        if orig == 0.0 {
            continue;
        }
        for _ in 0..2 {
            if basis.ncols() > 0 {
                let coeff = b_basis.transpose() * &v;
                v -= basis * coeff;
            }
            for (q, bq) in kept.iter().zip(&kept_b) {
                let h = bq.dot(&v);
                v -= q * h;
            }
        }
        let bv = DVector::from_vec(b.mul_vec(v.as_slice()));
        let norm = v.dot(&bv).max(0.0).sqrt();
        if norm > 1e-10 * orig {
            kept.push(v / norm);
            kept_b.push(bv / norm);
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(block.nrows(), 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

fn krylov_schur(
    op: &ShiftInvert,
    n: usize,
    k: usize,
    opts: &SparseSolverOptions,
    deflation: Option<&GradientDeflation>,
) -> Result<EigenSolution> {
    let window = opts.window.unwrap_or(2 * k + 10).max(k + opts.block_size + 1).min(n);
    let p = opts.block_size.max(1).min(window);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random_block = |cols: usize| DMatrix::from_fn(n, cols, |_, _| rng.gen_range(-1.0..1.0));
    let mut stats = SolverStats::default();

    let deflate = |x: &mut DMatrix<f64>| {
        if let Some(d) = deflation {
            d.apply(x);
        }
    };

    let empty = DMatrix::zeros(n, 0);
    let mut start = random_block(p);
    deflate(&mut start);
    let mut v = orthonormalize_block(op.b, &empty, &empty, start);
    let mut bv = op.b.mul_dense(&v);
    let mut w = op.apply(&v);
    stats.operator_applications += v.ncols();

    loop {
        stats.iterations += 1;
        let t = bv.transpose() * &w;
        let t = (&t + t.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let m = v.ncols();

        // Ritz values ranked by λ ascending among those above the cutoff
        let mut ranked: Vec<(f64, usize)> = (0..m)
            .map(|j| (op.to_lambda(eig.eigenvalues[j]), j))
            .filter(|&(lam, _)| lam > opts.lambda_cut && lam.is_finite())
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let full_space = m >= n;

        let wanted: Vec<usize> = ranked.iter().take(k).map(|&(_, j)| j).collect();
        let y_w = DMatrix::from_fn(m, wanted.len(), |r, c| eig.eigenvectors[(r, wanted[c])]);
        let x_w = &v * &y_w;
        let sx_w = &w * &y_w;
        let mut residuals = DMatrix::zeros(n, wanted.len());
        let mut converged = Vec::with_capacity(wanted.len());
        for (c, &j) in wanted.iter().enumerate() {
            let theta = eig.eigenvalues[j];
            let r = sx_w.column(c) - x_w.column(c) * theta;
            let rn = b_dot(op.b, r.as_slice(), r.as_slice()).max(0.0).sqrt();
            converged.push(rn <= opts.tol * theta.abs() || full_space);
            residuals.set_column(c, &r);
        }
        let n_conv = converged.iter().filter(|&&c| c).count();

        if wanted.len() == k && n_conv == k {
            return Ok(EigenSolution {
                values: wanted.iter().map(|&j| op.to_lambda(eig.eigenvalues[j])).collect(),
                vectors: x_w,
                residual_norms: Vec::new(),
                b_normalized: true,
                stats,
            });
        }
        if full_space {
            return Err(Error::TooFewEigenvalues { found: ranked.len(), wanted: k, cut: opts.lambda_cut });
        }
        if stats.iterations >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations: stats.iterations, converged: n_conv, wanted: k });
        }

        // new directions: residuals of unconverged wanted pairs first
        let mut new_cols: Vec<DVector<f64>> = wanted
            .iter()
            .enumerate()
            .filter(|&(c, _)| !converged[c])
            .map(|(c, _)| residuals.column(c).into_owned())
            .take(p)
            .collect();
        for &(_, j) in ranked.iter().skip(k) {
            if new_cols.len() >= p {
                break;
            }
            let y = eig.eigenvectors.column(j);
            new_cols.push(&w * y - (&v * y) * eig.eigenvalues[j]);
        }
        let mut block = if new_cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&new_cols) };
        if block.ncols() < p {
            let extra = random_block(p - block.ncols());
            block =
                DMatrix::from_fn(
                    n,
                    p,
                    |r, c| {
                        if c < block.ncols() {
                            block[(r, c)]
                        } else {
                            extra[(r, c - block.ncols())]
                        }
                    },
                );
        }

        if m + p > window {
            // thick restart on the best Ritz vectors; V, BV and W = S·V stay
            // consistent because the restart is a right multiplication
            stats.restarts += 1;
            let keep = (window - p).max(k.min(window - p));
            let mut order: Vec<usize> = ranked.iter().map(|&(_, j)| j).collect();
            // leftover slots go to the remaining Ritz vectors by |θ|
            let mut rest: Vec<usize> = (0..m).filter(|j| !order.contains(j)).collect();
            rest.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
            order.extend(rest);
            order.truncate(keep);
            let y = DMatrix::from_fn(m, order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
            v = &v * &y;
            bv = &bv * &y;
            w = &w * &y;
        }

        deflate(&mut block);
        let mut fresh = orthonormalize_block(op.b, &v, &bv, block);
        if fresh.ncols() == 0 {
            let mut r = random_block(p);
            deflate(&mut r);
            fresh = orthonormalize_block(op.b, &v, &bv, r);
            if fresh.ncols() == 0 {
                return Err(Error::NoConvergence { iterations: stats.iterations, converged: n_conv, wanted: k });
            }
        }
        let b_fresh = op.b.mul_dense(&fresh);
        let w_fresh = op.apply(&fresh);
        stats.operator_applications += fresh.ncols();
        v = hcat(&v, &fresh);
        bv = hcat(&bv, &b_fresh);
        w = hcat(&w, &w_fresh);
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, ca, cb) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(n, ca + cb);
    out.columns_mut(0, ca).copy_from(a);
    out.columns_mut(ca, cb).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let sol = solve_dense_gevp(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(sol.values, vec![1.0, 2.0]);
        let half = solve_dense_gevp(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((half.values[0] - 0.5).abs() < 1e-15 && (half.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_rejects_indefinite_mass() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(solve_dense_gevp(&DMatrix::identity(2, 2), &b).is_err());
    }

    #[test]
    fn dense_vectors_are_b_orthonormal() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0]);
        let sol = solve_dense_gevp(&a, &b).unwrap();
        let g = sol.vectors.transpose() * &b * &sol.vectors;
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-13);
        assert!(sol.residual_norms.iter().all(|&r| r < 1e-13));
    }

    #[test]
    fn sparse_matches_dense_on_laplacian_pencil() {
        // 1D Dirichlet Laplacian with a consistent mass matrix
        let n = 60;
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        for i in 0..n {
            ta.push((i, i, 2.0));
            tb.push((i, i, 4.0 / 6.0));
            if i + 1 < n {
                for (r, c) in [(i, i + 1), (i + 1, i)] {
                    ta.push((r, c, -1.0));
                    tb.push((r, c, 1.0 / 6.0));
                }
            }
        }
        let pair =
            SystemPair::new(CsrMatrix::from_triplets(n, n, &ta), CsrMatrix::from_triplets(n, n, &tb), "laplacian")
                .unwrap();
        let dense = dense_oracle(&pair).unwrap();
        let opts = SparseSolverOptions::from_first_eigenvalue(dense.values[0]);
        let sol = solve_sparse_gevp(&pair, 4, &opts).unwrap();
        for i in 0..4 {
            assert!((sol.values[i] - dense.values[i]).abs() <= 1e-10 * dense.values[i]);
        }
        assert!(solve_sparse_gevp(&pair, 0, &opts).unwrap().is_empty());
    }
}
