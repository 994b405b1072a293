//! Structured hexahedral meshes of brick cavities.
//!
//! Vertices, edges and cells are enumerated lexicographically with z slowest
//! and x fastest. Every edge points from its lower-index vertex to its
//! higher-index vertex. Edges lying in one of the six boundary planes carry
//! the PEC condition and are eliminated; the remaining edges are the degrees
//! of freedom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Unit-cube corner offsets of the local vertices.
pub const LOCAL_VERTICES: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

/// Local edges as (axis, tail offset). Edges 0–3 run along x, 4–7 along y and
/// 8–11 along z; within a group the two transverse offsets count up with the
/// lower axis fastest.
pub const LOCAL_EDGES: [(usize, [usize; 3]); 12] = [
    (0, [0, 0, 0]),
    (0, [0, 1, 0]),
    (0, [0, 0, 1]),
    (0, [0, 1, 1]),
    (1, [0, 0, 0]),
    (1, [1, 0, 0]),
    (1, [0, 0, 1]),
    (1, [1, 0, 1]),
    (2, [0, 0, 0]),
    (2, [1, 0, 0]),
    (2, [0, 1, 0]),
    (2, [1, 1, 0]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub vertices: [usize; 8],
    pub edges: [usize; 12],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityMesh {
    dims: [f64; 3],
    resolution: [usize; 3],
    vertices: Vec<[f64; 3]>,
    edges: Vec<[usize; 2]>,
    cells: Vec<Cell>,
    boundary_vertex: Vec<bool>,
    boundary_edge: Vec<bool>,
    free_edge_index: Vec<Option<usize>>,
    free_edges: Vec<usize>,
    interior_vertex_index: Vec<Option<usize>>,
    interior_vertices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub dims: [f64; 3],
    pub resolution: [usize; 3],
    pub vertices: usize,
    pub edges: usize,
    pub cells: usize,
    pub free_edges: usize,
    pub interior_vertices: usize,
}

impl CavityMesh {
    pub fn build(dims: [f64; 3], resolution: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidMesh(format!("edge lengths must be positive, got {dims:?}")));
        }
        if resolution.contains(&0) {
            return Err(Error::InvalidMesh(format!("cell counts must be at least 1, got {resolution:?}")));
        }
        let [nx, ny, nz] = resolution;
        let too_big = || Error::InvalidMesh(format!("resolution {resolution:?} overflows the index type"));
        let (px, py, pz) = (nx + 1, ny + 1, nz + 1);
        let n_vertices = px.checked_mul(py).and_then(|v| v.checked_mul(pz)).ok_or_else(too_big)?;
        let n_edges = edge_count(resolution).ok_or_else(too_big)?;
        // every index must also survive the 12·cells connectivity arrays
        nx.checked_mul(ny).and_then(|c| c.checked_mul(nz)).and_then(|c| c.checked_mul(12)).ok_or_else(too_big)?;
        if n_edges.checked_mul(2).is_none() {
            return Err(too_big());
        }

        let vid = |i: usize, j: usize, k: usize| i + px * (j + py * k);
        let h = [dims[0] / nx as f64, dims[1] / ny as f64, dims[2] / nz as f64];

        let mut vertices = Vec::with_capacity(n_vertices);
        let mut boundary_vertex = Vec::with_capacity(n_vertices);
        for k in 0..pz {
            for j in 0..py {
                for i in 0..px {
                    vertices.push([i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]]);
                    boundary_vertex.push(i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz);
                }
            }
        }

        // edges keyed by tail vertex and axis
        let mut axis_edge = vec![[usize::MAX; 3]; n_vertices];
        let mut edges = Vec::with_capacity(n_edges);
        let mut boundary_edge = Vec::with_capacity(n_edges);
        for k in 0..pz {
            for j in 0..py {
                for i in 0..px {
                    let tail = vid(i, j, k);
                    let ijk = [i, j, k];
                    for axis in 0..3 {
                        if ijk[axis] == resolution[axis] {
                            continue;
                        }
                        let mut hi = ijk;
                        hi[axis] += 1;
                        axis_edge[tail][axis] = edges.len();
                        edges.push([tail, vid(hi[0], hi[1], hi[2])]);
                        let on_boundary = (0..3).filter(|&a| a != axis).any(|a| ijk[a] == 0 || ijk[a] == resolution[a]);
                        boundary_edge.push(on_boundary);
                    }
                }
            }
        }
        debug_assert_eq!(edges.len(), n_edges);

        let mut cells = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let vertices = LOCAL_VERTICES.map(|o| vid(i + o[0], j + o[1], k + o[2]));
                    let edges = LOCAL_EDGES.map(|(axis, o)| axis_edge[vid(i + o[0], j + o[1], k + o[2])][axis]);
                    cells.push(Cell { vertices, edges });
                }
            }
        }

        let (free_edge_index, free_edges) = renumber(&boundary_edge);
        let (interior_vertex_index, interior_vertices) = renumber(&boundary_vertex);

        Ok(Self {
            dims,
            resolution,
            vertices,
            edges,
            cells,
            boundary_vertex,
            boundary_edge,
            free_edge_index,
            free_edges,
            interior_vertex_index,
            interior_vertices,
        })
    }

    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    /// Dense DoF index of a non-boundary edge.
    pub fn free_edge_index(&self, e: usize) -> Option<usize> {
        self.free_edge_index[e]
    }

    /// Global edge index of each DoF.
    pub fn free_edges(&self) -> &[usize] {
        &self.free_edges
    }

    pub fn interior_vertex_index(&self, v: usize) -> Option<usize> {
        self.interior_vertex_index[v]
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    pub fn num_free_edges(&self) -> usize {
        self.free_edges.len()
    }

    pub fn num_interior_vertices(&self) -> usize {
        self.interior_vertices.len()
    }

    /// Same topology with the vertices rescaled to another brick.
    pub fn with_dims(&self, dims: [f64; 3]) -> Result<Self> {
        Self::build(dims, self.resolution)
    }

    /// True when both meshes number all entities identically.
    pub fn same_topology(&self, other: &Self) -> bool {
        self.resolution == other.resolution && self.edges == other.edges
    }

    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            dims: self.dims,
            resolution: self.resolution,
            vertices: self.vertices.len(),
            edges: self.edges.len(),
            cells: self.cells.len(),
            free_edges: self.num_free_edges(),
            interior_vertices: self.num_interior_vertices(),
        }
    }

    /// Incidence of free edges on interior vertices: +1 at the head, −1 at the
    /// tail. Boundary vertices carry zero potential and have no column.
    pub fn discrete_gradient(&self) -> DiscreteGradient {
        let mut triplets = Vec::with_capacity(2 * self.free_edges.len());
        for (row, &e) in self.free_edges.iter().enumerate() {
            let [tail, head] = self.edges[e];
            if let Some(c) = self.interior_vertex_index[tail] {
                triplets.push((row, c, -1.0));
            }
            if let Some(c) = self.interior_vertex_index[head] {
                triplets.push((row, c, 1.0));
            }
        }
        DiscreteGradient {
            matrix: CsrMatrix::from_triplets(self.free_edges.len(), self.interior_vertices.len(), &triplets),
        }
    }
}

/// `nx(ny+1)(nz+1) + ny(nx+1)(nz+1) + nz(nx+1)(ny+1)` with overflow checks.
fn edge_count([nx, ny, nz]: [usize; 3]) -> Option<usize> {
    let term = |a: usize, b: usize, c: usize| a.checked_mul(b + 1)?.checked_mul(c + 1);
    term(nx, ny, nz)?.checked_add(term(ny, nx, nz)?)?.checked_add(term(nz, nx, ny)?)
}

fn renumber(excluded: &[bool]) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut index = vec![None; excluded.len()];
    let mut kept = Vec::new();
    for (e, &skip) in excluded.iter().enumerate() {
        if !skip {
            index[e] = Some(kept.len());
            kept.push(e);
        }
    }
    (index, kept)
}

/// Sparse edge–vertex incidence restricted to DoFs (rows) and interior
/// vertices (columns). Its range is the discrete gradient space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradient {
    pub matrix: CsrMatrix,
}

impl DiscreteGradient {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_edges_formula([nx, ny, nz]: [usize; 3]) -> usize {
        nx * (ny - 1) * (nz - 1) + ny * (nx - 1) * (nz - 1) + nz * (nx - 1) * (ny - 1)
    }

    #[test]
    fn two_cubed() {
        let m = CavityMesh::build([1.0; 3], [2, 2, 2]).unwrap();
        assert_eq!(m.num_free_edges(), 6);
        assert_eq!(m.num_interior_vertices(), 1);
        let g = m.discrete_gradient();
        assert_eq!((g.nrows(), g.ncols()), (6, 1));
        assert_eq!(g.matrix.nnz(), 6);
        // three edges point into the center vertex, three point away
        let col: Vec<f64> = (0..6).map(|i| g.matrix.get(i, 0)).collect();
        assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(col.iter().filter(|&&v| v == -1.0).count(), 3);
    }

    #[test]
    fn single_cell_has_no_dofs() {
        let m = CavityMesh::build([1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!(m.num_free_edges(), 0);
        assert_eq!(m.num_interior_vertices(), 0);
        let g = m.discrete_gradient();
        assert_eq!((g.nrows(), g.ncols()), (0, 0));
    }

    #[test]
    fn anisotropic_three_cubed() {
        let m = CavityMesh::build([1.0, 1.1, 1.2], [3, 3, 3]).unwrap();
        assert_eq!(m.num_free_edges(), 36);
        assert_eq!(m.num_interior_vertices(), 8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CavityMesh::build([0.0, 1.0, 1.0], [1, 1, 1]).is_err());
        assert!(CavityMesh::build([1.0, -1.0, 1.0], [1, 1, 1]).is_err());
        assert!(CavityMesh::build([1.0; 3], [0, 1, 1]).is_err());
        assert!(matches!(CavityMesh::build([1.0; 3], [usize::MAX / 2, 2, 2]), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn counting_identities() {
        for nx in 1..=6 {
            for ny in 1..=6 {
                for nz in 1..=6 {
                    let r = [nx, ny, nz];
                    let m = CavityMesh::build([1.0, 1.1, 1.2], r).unwrap();
                    assert_eq!(m.edges().len(), edge_count(r).unwrap());
                    assert_eq!(m.num_free_edges(), free_edges_formula(r), "{r:?}");
                    assert_eq!(m.num_interior_vertices(), (nx - 1) * (ny - 1) * (nz - 1));
                    assert!(m.edges().iter().all(|&[t, h]| t < h));
                    let mut referenced = vec![false; m.edges().len()];
                    for c in m.cells() {
                        let mut e = c.edges.to_vec();
                        e.sort_unstable();
                        e.dedup();
                        assert_eq!(e.len(), 12);
                        e.iter().for_each(|&i| referenced[i] = true);
                    }
                    assert!(m.free_edges().iter().all(|&e| referenced[e]));
                }
            }
        }
    }

    #[test]
    fn gradient_columns_have_one_to_six_entries() {
        let m = CavityMesh::build([1.0; 3], [4, 3, 5]).unwrap();
        let gt = m.discrete_gradient().matrix.transpose();
        for v in 0..gt.nrows() {
            let (cols, vals) = gt.row(v);
            assert!((1..=6).contains(&cols.len()));
            assert!(vals.iter().all(|&x| x == 1.0 || x == -1.0));
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        let a = CavityMesh::build([1.0, 2.0, 3.0], [3, 2, 4]).unwrap();
        let b = CavityMesh::build([1.0, 2.0, 3.0], [3, 2, 4]).unwrap();
        assert_eq!(a, b);
        assert!(a.same_topology(&a.with_dims([2.0, 2.0, 2.0]).unwrap()));
    }
}
