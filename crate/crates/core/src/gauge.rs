//! Tree-cotree gauge.
//!
//! A breadth-first spanning tree of the free-edge graph, rooted at a virtual
//! node that merges all boundary vertices, picks one edge per interior vertex.
//! The remaining (cotree) edges index the gauged unknowns. The cotree
//! operator H is the row restriction of A to the cotree rows; it keeps the
//! global column order, which leaves every product it appears in unchanged.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::SystemPair;
use crate::error::{Error, Result};
use crate::factor::{Definiteness, SparseLdl, SymbolicLdl};
use crate::mesh::DiscreteGradient;
use crate::sparse::CsrMatrix;

/// Relative consistency residual above which a projection is rejected.
pub const PROJECTION_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaugeDecomposition {
    /// Tree DoFs in discovery order; the k-th edge discovered `parent_order[k]`.
    pub tree: Vec<usize>,
    /// Cotree DoFs, ascending.
    pub cotree: Vec<usize>,
    /// Interior vertices in breadth-first discovery order.
    pub parent_order: Vec<usize>,
    /// Total number of DoFs.
    pub dofs: usize,
}

impl GaugeDecomposition {
    /// Breadth-first search over the DoF graph encoded by `grad`: a row with
    /// two entries joins two interior vertices, a row with one entry joins an
    /// interior vertex to the boundary super-node.
    pub fn build(grad: &DiscreteGradient) -> Result<Self> {
        let g = &grad.matrix;
        let nv = g.ncols();
        let root = nv;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nv + 1];
        for e in 0..g.nrows() {
            let (cols, _) = g.row(e);
            let (u, v) = match cols {
                [] => continue,
                [a] => (*a, root),
                [a, b] => (*a, *b),
                _ => return Err(Error::InvalidMesh(format!("DoF {e} touches more than two vertices"))),
            };
            adj[u].push((e, v));
            adj[v].push((e, u));
        }
        let mut seen = vec![false; nv + 1];
        seen[root] = true;
        let mut tree = Vec::with_capacity(nv);
        let mut parent_order = Vec::with_capacity(nv);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(e, v) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    tree.push(e);
                    parent_order.push(v);
                    queue.push_back(v);
                }
            }
        }
        if let Some(v) = (0..nv).find(|&v| !seen[v]) {
            return Err(Error::DisconnectedVertex(v));
        }
        let mut in_tree = vec![false; g.nrows()];
        tree.iter().for_each(|&e| in_tree[e] = true);
        let cotree = (0..g.nrows()).filter(|&e| !in_tree[e]).collect();
        Ok(Self { tree, cotree, parent_order, dofs: g.nrows() })
    }

    pub fn tree_len(&self) -> usize {
        self.tree.len()
    }

    pub fn cotree_len(&self) -> usize {
        self.cotree.len()
    }

    /// G restricted to the tree rows, rows and columns in discovery order.
    /// Lower triangular with ±1 on the diagonal.
    pub fn tree_gradient(&self, grad: &DiscreteGradient) -> DMatrix<f64> {
        let n = self.tree.len();
        let mut pos = vec![usize::MAX; grad.ncols()];
        for (k, &v) in self.parent_order.iter().enumerate() {
            pos[v] = k;
        }
        let mut m = DMatrix::zeros(n, n);
        for (r, &e) in self.tree.iter().enumerate() {
            let (cols, vals) = grad.matrix.row(e);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, pos[c])] = v;
            }
        }
        m
    }

    pub fn cotree_operator(&self, a: &CsrMatrix) -> Result<CotreeOperator> {
        if a.nrows() != self.dofs {
            return Err(Error::DimensionMismatch(format!("gauge has {} DoFs, matrix has {}", self.dofs, a.nrows())));
        }
        Ok(CotreeOperator { h: a.select_rows(&self.cotree) })
    }
}

/// H = A[C, :], a |C| × N sparse matrix.
#[derive(Debug, Clone)]
pub struct CotreeOperator {
    pub h: CsrMatrix,
}

impl CotreeOperator {
    /// Hᵀ·x for a cotree block x (|C| × m).
    pub fn transpose_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.h.transpose_mul_dense(x)
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.h.mul_dense(x)
    }
}

/// Dense gauged pencil (Â, B̂) of dimension |C|.
#[derive(Debug, Clone)]
pub struct CotreeSystem {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

impl CotreeSystem {
    pub fn dim(&self) -> usize {
        self.a_hat.nrows()
    }

    /// Dense entries held by this system.
    pub fn storage(&self) -> usize {
        self.a_hat.len() + self.b_hat.len()
    }
}

/// How the cotree coordinates v̂ = H⁻ᵀBv are computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMethod {
    /// Solve the square cotree block A_CC v̂ = (Bv)_C with a sparse factor.
    /// A_CC is SPD under a tree gauge, and for a consistent right-hand side
    /// this is the unique least-squares solution.
    #[default]
    CotreeBlock,
    /// Householder QR least squares on a dense copy of Hᵀ.
    DenseQr,
}

/// A pencil at one parameter value together with its cotree operator.
/// Factorizations of B and of the cotree block are formed on first use.
#[derive(Debug)]
pub struct GaugedPencil {
    pub pair: SystemPair,
    pub h: CotreeOperator,
    cotree: Vec<usize>,
    h_source: Option<CsrMatrix>,
    block_symbolic: Option<Arc<SymbolicLdl>>,
    b_factor: OnceLock<Arc<SparseLdl>>,
    block_factor: OnceLock<SparseLdl>,
}

fn get_or_try<T>(cell: &OnceLock<T>, init: impl FnOnce() -> Result<T>) -> Result<&T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = init()?;
    Ok(cell.get_or_init(|| v))
}

impl GaugedPencil {
    pub fn new(pair: SystemPair, gauge: &GaugeDecomposition) -> Result<Self> {
        let h = gauge.cotree_operator(&pair.a)?;
        Ok(Self {
            pair,
            h,
            cotree: gauge.cotree.clone(),
            h_source: None,
            block_symbolic: None,
            b_factor: OnceLock::new(),
            block_factor: OnceLock::new(),
        })
    }

    /// Uses `h_matrix` (e.g. A at a fixed parameter) instead of the pencil's
    /// own A to form H.
    pub fn with_frozen_h(pair: SystemPair, gauge: &GaugeDecomposition, h_matrix: &CsrMatrix) -> Result<Self> {
        let h = gauge.cotree_operator(h_matrix)?;
        Ok(Self {
            pair,
            h,
            cotree: gauge.cotree.clone(),
            h_source: Some(h_matrix.clone()),
            block_symbolic: None,
            b_factor: OnceLock::new(),
            block_factor: OnceLock::new(),
        })
    }

    /// Reuses a symbolic factor for the cotree block A_CC; its pattern must
    /// cover that of the block.
    pub fn with_block_symbolic(mut self, symbolic: Arc<SymbolicLdl>) -> Self {
        self.block_symbolic = Some(symbolic);
        self
    }

    pub fn b_factor(&self) -> Result<&Arc<SparseLdl>> {
        get_or_try(&self.b_factor, || {
            let f = SparseLdl::factorize_with(self.pair.symbolic().clone(), &self.pair.b, Definiteness::Positive)?;
            Ok(Arc::new(f))
        })
    }

    pub fn dim(&self) -> usize {
        self.pair.dim()
    }

    pub fn cotree_dim(&self) -> usize {
        self.cotree.len()
    }

    /// B⁻¹Hᵀ·x, mapping cotree coordinates to full DoFs.
    pub fn upscale(&self, v_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.b_factor()?.solve_block(&self.h.transpose_apply(v_hat)))
    }

    /// Dense Â = (HB⁻¹)A(HB⁻¹)ᵀ and B̂ = (HB⁻¹)B(HB⁻¹)ᵀ, formed through block
    /// solves with the sparse factor of B.
    pub fn cotree_system(&self) -> Result<CotreeSystem> {
        let ht = self.h.h.transpose().to_dense();
        let x = self.b_factor()?.solve_block(&ht);
        let a_hat = x.transpose() * self.pair.a.mul_dense(&x);
        let b_hat = x.transpose() * self.pair.b.mul_dense(&x);
        Ok(CotreeSystem { a_hat: (&a_hat + a_hat.transpose()) * 0.5, b_hat: (&b_hat + b_hat.transpose()) * 0.5 })
    }

    fn cotree_block(&self) -> Result<&SparseLdl> {
        get_or_try(&self.block_factor, || {
            let a = self.h_source.as_ref().unwrap_or(&self.pair.a);
            let acc = a.submatrix(&self.cotree, &self.cotree);
            match &self.block_symbolic {
                Some(s) => SparseLdl::factorize_with(s.clone(), &acc, Definiteness::Positive),
                None => SparseLdl::factorize(&acc, Definiteness::Positive),
            }
        })
    }

    /// Cotree coordinates of the columns of `v` together with the relative
    /// consistency residual ‖Hᵀv̂ − Bv‖/‖Bv‖ of each column.
    pub fn project_with_residuals(
        &self,
        v: &DMatrix<f64>,
        method: ProjectionMethod,
    ) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let rhs = self.pair.b.mul_dense(v);
        let v_hat = match method {
            ProjectionMethod::CotreeBlock => {
                let f = self.cotree_block()?;
                let rc = DMatrix::from_fn(self.cotree.len(), rhs.ncols(), |r, c| rhs[(self.cotree[r], c)]);
                f.solve_block(&rc)
            }
            ProjectionMethod::DenseQr => {
                let ht = self.h.h.transpose().to_dense();
                let qr = ht.qr();
                let qtb = qr.q().transpose() * &rhs;
                qr.r()
                    .solve_upper_triangular(&qtb)
                    .ok_or_else(|| Error::InvalidArgument("Hᵀ is rank deficient".into()))?
            }
        };
        let fit = self.h.transpose_apply(&v_hat);
        let residuals = (0..rhs.ncols())
            .map(|c| {
                let den = rhs.column(c).norm();
                if den == 0.0 {
                    0.0
                } else {
                    (fit.column(c) - rhs.column(c)).norm() / den
                }
            })
            .collect();
        Ok((v_hat, residuals))
    }

    /// Like [`Self::project_with_residuals`] but rejects any column whose
    /// consistency residual exceeds [`PROJECTION_LIMIT`] (the input was not
    /// free of gradient components).
    pub fn project_to_cotree(&self, v: &DMatrix<f64>, method: ProjectionMethod) -> Result<DMatrix<f64>> {
        let (v_hat, residuals) = self.project_with_residuals(v, method)?;
        if let Some((column, &residual)) = residuals.iter().enumerate().find(|(_, &r)| !(r <= PROJECTION_LIMIT)) {
            return Err(Error::IllPosedProjection { column, residual, limit: PROJECTION_LIMIT });
        }
        Ok(v_hat)
    }
}
