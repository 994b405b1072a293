//! Compressed sparse row matrices.
//!
//! Only the handful of kernels the eigen and reduced-basis code needs:
//! matrix-vector and matrix-block products, row/column selection, and
//! pattern-union linear combinations for parameter interpolation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds a matrix from raw CSR arrays. Column indices must be strictly
    /// increasing within each row.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || col_idx.len() != values.len() {
            return Err(Error::DimensionMismatch("malformed CSR arrays".into()));
        }
        if row_ptr[0] != 0 || row_ptr[nrows] != col_idx.len() {
            return Err(Error::DimensionMismatch("malformed CSR row pointer".into()));
        }
        for i in 0..nrows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::DimensionMismatch("row pointer not monotone".into()));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= ncols) {
                return Err(Error::DimensionMismatch(format!("bad column indices in row {i}")));
            }
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, values })
    }

    /// Assembles from (row, col, value) triplets. Duplicates are summed in the
    /// order they appear, so identical input gives bit-identical output.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // Counting sort by row keeps the original order within a row.
        let mut next = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            by_row[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut by_row[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(c, _)| c);
            let start = col_idx.len();
            for &(c, v) in row.iter() {
                if col_idx.len() > start && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `self * x` for a dense block `x` (ncols × m).
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let m = x.ncols();
        let mut y = DMatrix::zeros(self.nrows, m);
        for c in 0..m {
            let xc = x.column(c);
            let mut yc = y.column_mut(c);
            for i in 0..self.nrows {
                let (cols, vals) = self.row(i);
                yc[i] = cols.iter().zip(vals).map(|(&j, &v)| v * xc[j]).sum();
            }
        }
        y
    }

    /// `selfᵀ * x` for a dense block `x` (nrows × m).
    pub fn transpose_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.nrows);
        let m = x.ncols();
        let mut y = DMatrix::zeros(self.ncols, m);
        for c in 0..m {
            let xc = x.column(c);
            let mut yc = y.column_mut(c);
            for i in 0..self.nrows {
                let xi = xc[i];
                if xi == 0.0 {
                    continue;
                }
                let (cols, vals) = self.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    yc[j] += v * xi;
                }
            }
        }
        y
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Rows `rows` of `self`, in the given order, all columns kept.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &r in rows {
            let (cols, vals) = self.row(r);
            col_idx.extend_from_slice(cols);
            values.extend_from_slice(vals);
            row_ptr.push(col_idx.len());
        }
        Self { nrows: rows.len(), ncols: self.ncols, row_ptr, col_idx, values }
    }

    /// The submatrix `self[rows, cols]`. `cols` must be strictly increasing.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &r in rows {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                let k = col_map[c];
                if k != usize::MAX {
                    col_idx.push(k);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows: rows.len(), ncols: cols.len(), row_ptr, col_idx, values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_1(&self) -> f64 {
        let mut sums = vec![0.0; self.ncols];
        for (_, j, v) in self.triplets() {
            sums[j] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Largest |a_ij − a_ji| relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.triplets().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max) / scale
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Replaces the stored values; the pattern is unchanged.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}

/// Union sparsity pattern of two equally sized matrices, with scatter maps
/// so that `(1 − t)·M₀ + t·M₁` costs one pass over the union entries.
#[derive(Debug, Clone)]
pub struct UnionPattern {
    pattern: CsrMatrix,
    lhs: Vec<f64>,
    rhs: Vec<f64>,
}

impl UnionPattern {
    pub fn new(m0: &CsrMatrix, m1: &CsrMatrix) -> Result<Self> {
        if m0.nrows != m1.nrows || m0.ncols != m1.ncols {
            return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", m0.nrows, m0.ncols, m1.nrows, m1.ncols)));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..m0.nrows {
            let (c0, v0) = m0.row(i);
            let (c1, v1) = m1.row(i);
            let (mut a, mut b) = (0, 0);
            while a < c0.len() || b < c1.len() {
                let ca = c0.get(a).copied().unwrap_or(usize::MAX);
                let cb = c1.get(b).copied().unwrap_or(usize::MAX);
                let c = ca.min(cb);
                col_idx.push(c);
                if ca == c {
                    lhs.push(v0[a]);
                    a += 1;
                } else {
                    lhs.push(0.0);
                }
                if cb == c {
                    rhs.push(v1[b]);
                    b += 1;
                } else {
                    rhs.push(0.0);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        let pattern = CsrMatrix { nrows: m0.nrows, ncols: m0.ncols, row_ptr, col_idx, values };
        Ok(Self { pattern, lhs, rhs })
    }

    /// `(1 − t)·M₀ + t·M₁`. At t = 0 and t = 1 the endpoint values are
    /// returned exactly.
    pub fn combine(&self, t: f64) -> CsrMatrix {
        let values = if t == 0.0 {
            self.lhs.clone()
        } else if t == 1.0 {
            self.rhs.clone()
        } else {
            self.lhs.iter().zip(&self.rhs).map(|(&a, &b)| (1.0 - t) * a + t * b).collect()
        };
        self.pattern.with_values(values)
    }

    /// `alpha·M₀ + beta·M₁` on the union pattern.
    pub fn linear(&self, alpha: f64, beta: f64) -> CsrMatrix {
        let values = self.lhs.iter().zip(&self.rhs).map(|(&a, &b)| alpha * a + beta * b).collect();
        self.pattern.with_values(values)
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (2, 2, 3.0), (1, 1, 1.0)],
        )
    }

    #[test]
    fn triplet_duplicates_are_summed() {
        let m = sample();
        assert_eq!(m.get(1, 1), 3.0);
        assert_eq!(m.nnz(), 5);
        assert_eq!(m.symmetry_defect(), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let m = sample();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 2.0, -1.0, 3.0, 4.0]);
        let d = m.to_dense();
        assert_eq!(m.mul_dense(&x), &d * &x);
        assert_eq!(m.transpose_mul_dense(&x), d.transpose() * &x);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![0.0, 5.0, 9.0]);
    }

    #[test]
    fn submatrix_and_row_selection() {
        let m = sample();
        let s = m.submatrix(&[1, 2], &[1, 2]);
        assert_eq!(s.to_dense(), DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
        let r = m.select_rows(&[2, 0]);
        assert_eq!(r.get(0, 2), 3.0);
        assert_eq!(r.get(1, 1), -1.0);
    }

    #[test]
    fn union_interpolation() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 4.0), (1, 1, 3.0)]);
        let u = UnionPattern::new(&a, &b).unwrap();
        assert_eq!(u.combine(0.0).to_dense(), a.to_dense());
        assert_eq!(u.combine(1.0).to_dense(), b.to_dense());
        let h = u.combine(0.5).to_dense();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, 2.0]));
    }

    #[test]
    fn from_raw_rejects_unsorted_columns() {
        assert!(CsrMatrix::from_raw(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
    }
}
