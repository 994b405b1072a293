//! Sparse LDLᵀ factorization of symmetric matrices.
//!
//! Rows are reordered by minimum degree. The symbolic part (ordering,
//! elimination tree and column counts of L) depends on the pattern only and is
//! shared across every matrix of a parametrized family. The numeric phase is
//! up-looking, one row of L at a time. No pivoting is performed: positive
//! definite input gives a Cholesky-equivalent factor, and symmetric indefinite
//! input (shifted pencils) works as long as no pivot vanishes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const NONE: usize = usize::MAX;

/// Pattern-dependent part of the factorization.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    /// new index -> old index
    perm: Vec<usize>,
    /// old index -> new index
    inv_perm: Vec<usize>,
    /// elimination tree, `NONE` at the roots
    parent: Vec<usize>,
    /// column pointers of L (strict lower part)
    col_ptr: Vec<usize>,
    /// strict upper pattern of the permuted matrix, by column, sorted
    upper_ptr: Vec<usize>,
    upper_idx: Vec<usize>,
}

impl SymbolicLdl {
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows() != pattern.ncols() {
            return Err(Error::DimensionMismatch("factorization needs a square matrix".into()));
        }
        let n = pattern.nrows();
        let perm = minimum_degree(pattern);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j, _) in pattern.triplets() {
            let (pi, pj) = (inv_perm[i], inv_perm[j]);
            if pi < pj {
                cols[pj].push(pi);
            } else if pj < pi {
                cols[pi].push(pj);
            }
        }
        let mut upper_ptr = Vec::with_capacity(n + 1);
        let mut upper_idx = Vec::new();
        upper_ptr.push(0);
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
            upper_idx.extend_from_slice(c);
            upper_ptr.push(upper_idx.len());
        }

        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut counts = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &start in &upper_idx[upper_ptr[k]..upper_ptr[k + 1]] {
                let mut i = start;
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    counts[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for (i, c) in counts.iter().enumerate() {
            col_ptr.push(col_ptr[i] + c);
        }
        Ok(Self { n, perm, inv_perm, parent, col_ptr, upper_ptr, upper_idx })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of strict-lower entries of L.
    pub fn factor_nnz(&self) -> usize {
        self.col_ptr[self.n]
    }

    /// Multiply-adds spent by one numeric factorization.
    pub fn flops(&self) -> usize {
        (0..self.n)
            .map(|i| {
                let c = self.col_ptr[i + 1] - self.col_ptr[i];
                c * (c + 3) / 2
            })
            .sum()
    }

    fn upper_col(&self, k: usize) -> &[usize] {
        &self.upper_idx[self.upper_ptr[k]..self.upper_ptr[k + 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    /// Every pivot must be positive; failure reports a non-SPD matrix.
    Positive,
    /// Pivots may have either sign; only (near-)zero pivots fail.
    Indefinite,
}

/// Numeric LDLᵀ factor. Immutable once built; solves take `&self`.
#[derive(Debug, Clone)]
pub struct SparseLdl {
    symbolic: Arc<SymbolicLdl>,
    /// entries used in each column of L; below the symbolic count when the
    /// matrix pattern is a strict subset of the symbolic one
    len: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseLdl {
    pub fn factorize(m: &CsrMatrix, kind: Definiteness) -> Result<Self> {
        Self::factorize_with(Arc::new(SymbolicLdl::new(m)?), m, kind)
    }

    pub fn factorize_with(symbolic: Arc<SymbolicLdl>, m: &CsrMatrix, kind: Definiteness) -> Result<Self> {
        let s = &*symbolic;
        let n = s.n;
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix against a symbolic factor of order {n}",
                m.nrows(),
                m.ncols()
            )));
        }
        let nnz = s.factor_nnz();
        let mut rows = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut len = vec![0usize; n];
        let mut diag = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut flag = vec![NONE; n];
        let mut pattern = vec![0usize; n];
        let scale = (0..n).fold(0.0f64, |a, i| a.max(m.get(i, i).abs())).max(f64::MIN_POSITIVE);

        for k in 0..n {
            // scatter the upper column k of the permuted matrix and collect
            // the pattern of row k of L in topological order
            let mut top = n;
            flag[k] = k;
            let (cols, values) = m.row(s.perm[k]);
            for (&j, &v) in cols.iter().zip(values) {
                let pj = s.inv_perm[j];
                if pj > k {
                    continue;
                }
                if pj < k && s.upper_col(k).binary_search(&pj).is_err() {
                    return Err(Error::DimensionMismatch("matrix pattern exceeds the symbolic factor".into()));
                }
                y[pj] += v;
                let mut i = pj;
                let mut depth = 0;
                while flag[i] != k {
                    pattern[depth] = i;
                    depth += 1;
                    flag[i] = k;
                    i = s.parent[i];
                }
                while depth > 0 {
                    depth -= 1;
                    top -= 1;
                    pattern[top] = pattern[depth];
                }
            }
            let mut d = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = s.col_ptr[i];
                let end = start + len[i];
                for (&r, &l) in rows[start..end].iter().zip(&vals[start..end]) {
                    y[r] -= l * yi;
                }
                let l = yi / diag[i];
                d -= l * yi;
                rows[end] = k;
                vals[end] = l;
                len[i] += 1;
            }
            match kind {
                Definiteness::Positive if !(d > 0.0) => {
                    return Err(Error::NotPositiveDefinite { row: s.perm[k], pivot: d })
                }
                Definiteness::Indefinite if !(d.abs() > 1e-14 * scale) => {
                    return Err(Error::ZeroPivot { row: s.perm[k] })
                }
                _ => {}
            }
            diag[k] = d;
        }
        Ok(Self { symbolic, len, rows, vals, diag })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicLdl> {
        &self.symbolic
    }

    /// Number of negative pivots, i.e. the number of negative eigenvalues of
    /// the factored matrix (Sylvester's law of inertia).
    pub fn negative_pivots(&self) -> usize {
        self.diag.iter().filter(|&&d| d < 0.0).count()
    }

    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let start = self.symbolic.col_ptr[j];
        let end = start + self.len[j];
        (&self.rows[start..end], &self.vals[start..end])
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let s = &*self.symbolic;
        assert_eq!(rhs.len(), s.n);
        let mut x: Vec<f64> = s.perm.iter().map(|&p| rhs[p]).collect();
        for j in 0..s.n {
            let xj = x[j];
            let (rows, vals) = self.column(j);
            for (&r, &l) in rows.iter().zip(vals) {
                x[r] -= l * xj;
            }
        }
        for (xi, d) in x.iter_mut().zip(&self.diag) {
            *xi /= d;
        }
        for j in (0..s.n).rev() {
            let (rows, vals) = self.column(j);
            let acc: f64 = rows.iter().zip(vals).map(|(&r, &l)| l * x[r]).sum();
            x[j] -= acc;
        }
        let mut out = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    /// Solves for all columns of `rhs` in a single sweep over the factor.
    pub fn solve_block(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &*self.symbolic;
        assert_eq!(rhs.nrows(), s.n);
        let m = rhs.ncols();
        if m == 0 {
            return DMatrix::zeros(s.n, 0);
        }
        // row-major working copy so that row updates are contiguous
        let mut x = vec![0.0; s.n * m];
        for (new, &old) in s.perm.iter().enumerate() {
            for c in 0..m {
                x[new * m + c] = rhs[(old, c)];
            }
        }
        let mut buf = vec![0.0; m];
        for j in 0..s.n {
            buf.copy_from_slice(&x[j * m..(j + 1) * m]);
            let (rows, vals) = self.column(j);
            for (&r, &l) in rows.iter().zip(vals) {
                x[r * m..(r + 1) * m].iter_mut().zip(&buf).for_each(|(a, b)| *a -= l * b);
            }
        }
        for (i, d) in self.diag.iter().enumerate() {
            x[i * m..(i + 1) * m].iter_mut().for_each(|v| *v /= d);
        }
        for j in (0..s.n).rev() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            let (rows, vals) = self.column(j);
            for (&r, &l) in rows.iter().zip(vals) {
                buf.iter_mut().zip(&x[r * m..(r + 1) * m]).for_each(|(a, b)| *a += l * b);
            }
            x[j * m..(j + 1) * m].iter_mut().zip(&buf).for_each(|(a, b)| *a -= b);
        }
        let mut out = DMatrix::zeros(s.n, m);
        for (new, &old) in s.perm.iter().enumerate() {
            for c in 0..m {
                out[(old, c)] = x[new * m + c];
            }
        }
        out
    }
}

/// Minimum degree ordering of the symmetric pattern of `m` on the explicit
/// elimination graph. Ties go to the lowest index, so the result is
/// deterministic.
pub fn minimum_degree(m: &CsrMatrix) -> Vec<usize> {
    let n = m.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in m.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        adj.iter().enumerate().map(|(v, a)| Reverse((a.len(), v))).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut adj[v]);
        for &u in &clique {
            // adj[u] becomes (adj[u] ∪ clique) \ {u, v}
            merged.clear();
            let (a, b) = (&adj[u], &clique);
            let (mut p, mut q) = (0, 0);
            while p < a.len() || q < b.len() {
                let next = match (a.get(p), b.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (_, Some(&y)) => {
                        q += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}
