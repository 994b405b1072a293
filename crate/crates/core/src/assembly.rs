//! Lowest-order edge-element discretization of the curl-curl eigenproblem.
//!
//! Vacuum coefficients and c₀ = 1, so eigenvalues are ω²/c₀² directly.
//! Element integrals use 2×2×2 Gauss quadrature on the trilinear map of each
//! hexahedron with covariant Piola mapping of the reference edge functions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::factor::SymbolicLdl;
use crate::mesh::{CavityMesh, LOCAL_EDGES, LOCAL_VERTICES};
use crate::par;
use crate::sparse::{CsrMatrix, UnionPattern};

type Mat3 = [[f64; 3]; 3];

/// Curl-curl stiffness `a` and mass `b` on the free DoFs of one geometry.
#[derive(Debug, Clone)]
pub struct SystemPair {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub geometry_tag: String,
    symbolic: Arc<SymbolicLdl>,
}

impl SystemPair {
    /// Wraps an externally provided pair (e.g. read from Matrix Market files).
    pub fn new(a: CsrMatrix, b: CsrMatrix, geometry_tag: impl Into<String>) -> Result<Self> {
        if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let union = UnionPattern::new(&a, &b)?;
        let symbolic = Arc::new(SymbolicLdl::new(union.pattern())?);
        Ok(Self { a, b, geometry_tag: geometry_tag.into(), symbolic })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Symbolic factor valid for `a`, `b` and any combination of the two.
    pub fn symbolic(&self) -> &Arc<SymbolicLdl> {
        &self.symbolic
    }
}

pub fn assemble(mesh: &CavityMesh) -> Result<SystemPair> {
    let n = mesh.num_free_edges();
    if n == 0 {
        return Err(Error::InvalidMesh("mesh has no free edges".into()));
    }
    const CHUNK: usize = 64;
    let cells = mesh.cells();
    let chunks: Vec<usize> = (0..cells.len().div_ceil(CHUNK)).collect();
    // chunk results are merged in chunk order, so the sums are identical
    // with or without threads
    let parts = par::map(&chunks, |&c| -> Result<(Vec<_>, Vec<_>)> {
        let mut ka = Vec::new();
        let mut mb = Vec::new();
        let first = c * CHUNK;
        for (cell_id, cell) in cells.iter().enumerate().skip(first).take(CHUNK) {
            let coords = cell.vertices.map(|v| mesh.vertices()[v]);
            let (ke, me) =
                element_matrices(&coords).map_err(|(qp, det)| Error::DegenerateCell { cell: cell_id, qp, det })?;
            let dofs = cell.edges.map(|e| mesh.free_edge_index(e));
            for i in 0..12 {
                let Some(gi) = dofs[i] else { continue };
                for j in 0..12 {
                    let Some(gj) = dofs[j] else { continue };
                    ka.push((gi, gj, ke[i][j]));
                    mb.push((gi, gj, me[i][j]));
                }
            }
        }
        Ok((ka, mb))
    });
    let mut ka = Vec::new();
    let mut mb = Vec::new();
    for part in parts {
        let (k, m) = part?;
        ka.extend(k);
        mb.extend(m);
    }
    let [a, b, c] = mesh.dims();
    let [nx, ny, nz] = mesh.resolution();
    SystemPair::new(
        CsrMatrix::from_triplets(n, n, &ka),
        CsrMatrix::from_triplets(n, n, &mb),
        format!("brick {a}x{b}x{c} @ {nx}x{ny}x{nz}"),
    )
}

fn basis_derivative(offset: usize) -> f64 {
    if offset == 0 {
        -1.0
    } else {
        1.0
    }
}

fn basis_value(offset: usize, s: f64) -> f64 {
    if offset == 0 {
        1.0 - s
    } else {
        s
    }
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

fn unit(axis: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    e
}

/// Reference edge function and its curl at `xi` for local edge `e`.
fn reference_edge(e: usize, xi: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let (axis, offset) = LOCAL_EDGES[e];
    let (b, c) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let fb = basis_value(offset[b], xi[b]);
    let fc = basis_value(offset[c], xi[c]);
    let value = {
        let mut w = [0.0; 3];
        w[axis] = fb * fc;
        w
    };
    // curl(f ê_a) = ∇f × ê_a
    let db = basis_derivative(offset[b]) * fc;
    let dc = fb * basis_derivative(offset[c]);
    let eb = cross(unit(b), unit(axis));
    let ec = cross(unit(c), unit(axis));
    let curl = [0, 1, 2].map(|k| db * eb[k] + dc * ec[k]);
    (value, curl)
}

fn jacobian(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> Mat3 {
    let mut jac = [[0.0; 3]; 3];
    for (x, o) in coords.iter().zip(LOCAL_VERTICES) {
        for d in 0..3 {
            let mut dn = basis_derivative(o[d]);
            for (k, &ok) in o.iter().enumerate() {
                if k != d {
                    dn *= basis_value(ok, xi[k]);
                }
            }
            for i in 0..3 {
                jac[i][d] += x[i] * dn;
            }
        }
    }
    jac
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse transpose of `m` given its determinant.
fn inv_transpose(m: &Mat3, det: f64) -> Mat3 {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    // cofactor matrix divided by det is (m⁻¹)ᵀ
    [
        [c(1, 1, 2, 2) / det, -c(1, 0, 2, 2) / det, c(1, 0, 2, 1) / det],
        [-c(0, 1, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 2, 1) / det],
        [c(0, 1, 1, 2) / det, -c(0, 0, 1, 2) / det, c(0, 0, 1, 1) / det],
    ]
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn dot(u: [f64; 3], v: [f64; 3]) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

/// 12×12 stiffness and mass matrices of one hexahedron. On failure returns
/// the offending quadrature point and Jacobian determinant.
pub fn element_matrices(coords: &[[f64; 3]; 8]) -> Result<([[f64; 12]; 12], [[f64; 12]; 12]), (usize, f64)> {
    let g = 0.5 / 3f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let weight = 0.125;
    let mut ke = [[0.0; 12]; 12];
    let mut me = [[0.0; 12]; 12];
    let mut qp = 0;
    for &z in &pts {
        for &y in &pts {
            for &x in &pts {
                let xi = [x, y, z];
                let jac = jacobian(coords, xi);
                let det = det3(&jac);
                if !(det > 0.0) {
                    return Err((qp, det));
                }
                let jit = inv_transpose(&jac, det);
                let mut w = [[0.0; 3]; 12];
                let mut curl = [[0.0; 3]; 12];
                for e in 0..12 {
                    let (rw, rc) = reference_edge(e, xi);
                    w[e] = mat_vec(&jit, rw);
                    curl[e] = mat_vec(&jac, rc).map(|v| v / det);
                }
                let dv = det * weight;
                for i in 0..12 {
                    for j in i..12 {
                        ke[i][j] += dot(curl[i], curl[j]) * dv;
                        me[i][j] += dot(w[i], w[j]) * dv;
                    }
                }
                qp += 1;
            }
        }
    }
    for i in 0..12 {
        for j in 0..i {
            ke[i][j] = ke[j][i];
            me[i][j] = me[j][i];
        }
    }
    Ok((ke, me))
}

/// Two endpoint systems on a common DoF numbering, interpolated convexly.
/// Intermediate parameters are not physical geometries.
#[derive(Debug, Clone)]
pub struct ParametrizedSystem {
    endpoint0: SystemPair,
    endpoint1: SystemPair,
    a_union: UnionPattern,
    b_union: UnionPattern,
    symbolic: Arc<SymbolicLdl>,
}

impl ParametrizedSystem {
    pub fn new(endpoint0: SystemPair, endpoint1: SystemPair) -> Result<Self> {
        if endpoint0.dim() != endpoint1.dim() {
            return Err(Error::DimensionMismatch(format!(
                "endpoint dimensions differ: {} vs {}",
                endpoint0.dim(),
                endpoint1.dim()
            )));
        }
        let a_union = UnionPattern::new(&endpoint0.a, &endpoint1.a)?;
        let b_union = UnionPattern::new(&endpoint0.b, &endpoint1.b)?;
        let all = UnionPattern::new(a_union.pattern(), b_union.pattern())?;
        let symbolic = Arc::new(SymbolicLdl::new(all.pattern())?);
        Ok(Self { endpoint0, endpoint1, a_union, b_union, symbolic })
    }

    /// Assembles both geometries on the same resolution.
    pub fn from_meshes(mesh0: &CavityMesh, mesh1: &CavityMesh) -> Result<Self> {
        if !mesh0.same_topology(mesh1) {
            return Err(Error::DimensionMismatch("endpoint meshes differ in topology".into()));
        }
        Self::new(assemble(mesh0)?, assemble(mesh1)?)
    }

    /// A t-independent family (both endpoints identical).
    pub fn constant(pair: SystemPair) -> Result<Self> {
        Self::new(pair.clone(), pair)
    }

    pub fn endpoint0(&self) -> &SystemPair {
        &self.endpoint0
    }

    pub fn endpoint1(&self) -> &SystemPair {
        &self.endpoint1
    }

    pub fn dim(&self) -> usize {
        self.endpoint0.dim()
    }

    /// Pattern shared by A(t) for every t.
    pub fn a_pattern(&self) -> &CsrMatrix {
        self.a_union.pattern()
    }

    pub fn at(&self, t: f64) -> Result<SystemPair> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::ParameterOutOfRange(t));
        }
        Ok(SystemPair {
            a: self.a_union.combine(t),
            b: self.b_union.combine(t),
            geometry_tag: format!("interpolated t={t}"),
            symbolic: self.symbolic.clone(),
        })
    }
}

/// Exact eigenvalues π²(m²/a² + n²/b² + p²/c²) of a PEC brick, smallest
/// first, with multiplicity (two polarizations when all indices are nonzero).
pub fn brick_eigenvalues(dims: [f64; 3], count: usize) -> Vec<f64> {
    let pi2 = std::f64::consts::PI.powi(2);
    let mut vals = Vec::new();
    let mut limit = 4;
    loop {
        vals.clear();
        for m in 0..=limit {
            for n in 0..=limit {
                for p in 0..=limit {
                    let nonzero = [m, n, p].iter().filter(|&&k| k > 0).count();
                    if nonzero < 2 {
                        continue;
                    }
                    let lam = pi2
                        * ((m * m) as f64 / dims[0].powi(2)
                            + (n * n) as f64 / dims[1].powi(2)
                            + (p * p) as f64 / dims[2].powi(2));
                    vals.push(lam);
                    if nonzero == 3 {
                        vals.push(lam);
                    }
                }
            }
        }
        vals.sort_by(f64::total_cmp);
        // any index beyond `limit` gives at least π²(limit+1)²/max(dims)²
        let bound = pi2 * ((limit + 1) as f64).powi(2) / dims.iter().fold(0.0f64, |a, &d| a.max(d)).powi(2);
        if vals.len() >= count && vals[count - 1] < bound {
            vals.truncate(count);
            return vals;
        }
        if count == 0 {
            return Vec::new();
        }
        limit *= 2;
    }
}
