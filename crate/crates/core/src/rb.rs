//! Reduced-basis construction and evaluation for both gauges.
//!
//! Bases live in cotree coordinates. The mixed gauge gets its snapshots from
//! sparse solves of the ungauged system followed by least-squares
//! condensation, and evaluates reduced matrices through Ẑ = B⁻¹HᵀZ without
//! ever forming a |C|×|C| matrix. The classical gauge forms the dense cotree
//! system (Â, B̂) per parameter and works on it directly.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{brick_eigenvalues, ParametrizedSystem};
use crate::eigen::{solve_dense_gevp, solve_sparse_gevp, EigenSolution, SparseSolverOptions};
use crate::error::{Error, Result};
use crate::factor::SymbolicLdl;
use crate::gauge::{CotreeSystem, GaugeDecomposition, GaugedPencil, ProjectionMethod, PROJECTION_LIMIT};
use crate::mesh::CavityMesh;
use crate::par;

/// Singular value ratio below which POD modes count as numerically absent.
pub const POD_RANK_TOL: f64 = 1e-13;
/// Greedy candidates shorter than this after orthogonalization are dropped.
pub const APPEND_TOL: f64 = 1e-10;
/// Relative floor of the spectral gap in the estimator.
pub const GAP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaugeMode {
    Classical,
    #[default]
    Mixed,
}

/// Whether H follows A(t) or stays at A(0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HPolicy {
    #[default]
    PerParameter,
    Frozen,
}

/// Uniform grid of `n` points on [0, 1] (just 0 when `n == 1`).
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Midpoints of `n` equal subintervals of [0, 1].
pub fn offset_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// `n` seeded uniform samples from [0, 1].
pub fn random_set(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSets {
    pub pod_set: Vec<f64>,
    pub greedy_set: Vec<f64>,
    pub seed: u64,
}

impl TrainingSets {
    pub fn new(n_pod: usize, n_train: usize, seed: u64) -> Self {
        Self { pod_set: uniform_grid(n_pod), greedy_set: offset_grid(n_train), seed }
    }

    /// Number of greedy parameters that also appear in the POD set.
    pub fn overlap(&self) -> usize {
        let pod: HashSet<u64> = self.pod_set.iter().map(|t| t.to_bits()).collect();
        self.greedy_set.iter().filter(|t| pod.contains(&t.to_bits())).count()
    }
}

/// Counts dense matrix entries held at once; `peak` is the high-water mark.
#[derive(Debug, Default)]
pub struct StorageMeter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

#[must_use]
pub struct StorageHold<'a> {
    meter: &'a StorageMeter,
    entries: usize,
}

impl Drop for StorageHold<'_> {
    fn drop(&mut self) {
        self.meter.current.fetch_sub(self.entries, Ordering::Relaxed);
    }
}

impl StorageMeter {
    pub fn hold(&self, entries: usize) -> StorageHold<'_> {
        let now = self.current.fetch_add(entries, Ordering::Relaxed) + entries;
        self.peak.fetch_max(now, Ordering::Relaxed);
        StorageHold { meter: self, entries }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.current.load(Ordering::Relaxed), Ordering::Relaxed);
    }
}

/// Everything the pipelines need to evaluate the full-order family.
#[derive(Debug)]
pub struct RbProblem {
    pub system: ParametrizedSystem,
    pub gauge: GaugeDecomposition,
    pub solver: SparseSolverOptions,
    pub h_policy: HPolicy,
    pub projection: ProjectionMethod,
    pub meter: StorageMeter,
    block_symbolic: OnceLock<Arc<SymbolicLdl>>,
}

impl RbProblem {
    pub fn new(system: ParametrizedSystem, gauge: GaugeDecomposition, solver: SparseSolverOptions) -> Self {
        Self {
            system,
            gauge,
            solver,
            h_policy: HPolicy::default(),
            projection: ProjectionMethod::default(),
            meter: StorageMeter::default(),
            block_symbolic: OnceLock::new(),
        }
    }

    /// Brick morph between two meshes of equal resolution; the solver shift
    /// comes from the analytic first eigenvalue of the t = 0 brick.
    pub fn from_meshes(mesh0: &CavityMesh, mesh1: &CavityMesh) -> Result<Self> {
        let system = ParametrizedSystem::from_meshes(mesh0, mesh1)?;
        let gauge = GaugeDecomposition::build(&mesh0.discrete_gradient())?;
        let lambda1 = brick_eigenvalues(mesh0.dims(), 1)[0];
        Ok(Self::new(system, gauge, SparseSolverOptions::from_first_eigenvalue(lambda1)))
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn cotree_dim(&self) -> usize {
        self.gauge.cotree_len()
    }

    pub fn pencil(&self, t: f64) -> Result<GaugedPencil> {
        let pair = self.system.at(t)?;
        let pencil = match self.h_policy {
            HPolicy::PerParameter => GaugedPencil::new(pair, &self.gauge)?,
            HPolicy::Frozen => GaugedPencil::with_frozen_h(pair, &self.gauge, &self.system.endpoint0().a)?,
        };
        let symbolic = match self.block_symbolic.get() {
            Some(s) => s.clone(),
            None => {
                let cotree = &self.gauge.cotree;
                let block = self.system.a_pattern().submatrix(cotree, cotree);
                let s = Arc::new(SymbolicLdl::new(&block)?);
                self.block_symbolic.get_or_init(|| s).clone()
            }
        };
        Ok(pencil.with_block_symbolic(symbolic))
    }

    /// Sparse full-order solve for the `k` lowest physical modes.
    pub fn full_solve(&self, t: f64, k: usize) -> Result<EigenSolution> {
        solve_sparse_gevp(&self.system.at(t)?, k, &self.solver)
    }

    /// Sparse solve at `t` condensed to unit-norm cotree coordinates.
    fn mixed_snapshots(
        &self,
        pencil: &GaugedPencil,
        t: f64,
        k: usize,
    ) -> Result<(DMatrix<f64>, Vec<f64>, Duration, Duration)> {
        let clock = Instant::now();
        let sol = solve_sparse_gevp(&pencil.pair, k, &self.solver)?;
        let evp = clock.elapsed();
        let clock = Instant::now();
        let (mut v_hat, residuals) = pencil.project_with_residuals(&sol.vectors, self.projection)?;
        if let Some((mode, &residual)) = residuals.iter().enumerate().find(|(_, &r)| !(r <= PROJECTION_LIMIT)) {
            return Err(Error::Snapshot {
                t,
                mode: mode + 1,
                source: Box::new(Error::IllPosedProjection { column: mode, residual, limit: PROJECTION_LIMIT }),
            });
        }
        normalize_columns(&mut v_hat);
        Ok((v_hat, sol.values, evp, clock.elapsed()))
    }

    /// Dense solve of the cotree system for the `k` lowest modes above the
    /// cutoff, as unit-norm columns.
    fn classical_snapshots(&self, cs: &CotreeSystem, t: f64, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let sol = solve_dense_gevp(&cs.a_hat, &cs.b_hat)?;
        let idx: Vec<usize> = (0..sol.len()).filter(|&i| sol.values[i] > self.solver.lambda_cut).take(k).collect();
        if idx.len() < k {
            return Err(Error::Snapshot {
                t,
                mode: idx.len() + 1,
                source: Box::new(Error::TooFewEigenvalues { found: idx.len(), wanted: k, cut: self.solver.lambda_cut }),
            });
        }
        let mut v = sol.vectors.select_columns(&idx);
        normalize_columns(&mut v);
        Ok((v, idx.iter().map(|&i| sol.values[i]).collect()))
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    /// |C| × (len(pod_set)·K), unit columns, grouped by parameter.
    pub y: DMatrix<f64>,
    /// (t, mode) of each column, modes counted from 1.
    pub origin: Vec<(f64, usize)>,
    pub eigenvalues: Vec<f64>,
    /// Summed eigensolver time.
    pub evp_time: Duration,
    /// Summed time spent reaching cotree coordinates (condensation for the
    /// mixed gauge, forming Â and B̂ for the classical one).
    pub projection_time: Duration,
}

fn gather_snapshots(
    pod_set: &[f64],
    k: usize,
    cdim: usize,
    parts: Vec<(DMatrix<f64>, Vec<f64>, Duration, Duration)>,
) -> SnapshotSet {
    let mut y = DMatrix::zeros(cdim, pod_set.len() * k);
    let mut origin = Vec::with_capacity(y.ncols());
    let mut eigenvalues = Vec::with_capacity(y.ncols());
    let mut evp_time = Duration::ZERO;
    let mut projection_time = Duration::ZERO;
    for (j, (&t, (v, vals, evp, proj))) in pod_set.iter().zip(parts).enumerate() {
        y.columns_mut(j * k, k).copy_from(&v);
        origin.extend((1..=k).map(|i| (t, i)));
        eigenvalues.extend(vals);
        evp_time += evp;
        projection_time += proj;
    }
    SnapshotSet { y, origin, eigenvalues, evp_time, projection_time }
}

/// Mixed-gauge snapshots: sparse solves at each POD parameter, condensed to
/// cotree coordinates.
pub fn collect_snapshots(problem: &RbProblem, pod_set: &[f64], k: usize) -> Result<SnapshotSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode count K must be at least 1".into()));
    }
    let parts = par::map(pod_set, |&t| {
        let pencil = problem.pencil(t)?;
        problem.mixed_snapshots(&pencil, t, k)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let _hold = problem.meter.hold(problem.cotree_dim() * pod_set.len() * k);
    Ok(gather_snapshots(pod_set, k, problem.cotree_dim(), parts))
}

/// Classical-gauge snapshots: dense eigenvectors of (Â(t), B̂(t)).
pub fn collect_snapshots_classical(problem: &RbProblem, pod_set: &[f64], k: usize) -> Result<SnapshotSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode count K must be at least 1".into()));
    }
    let (n, c) = (problem.dim(), problem.cotree_dim());
    let parts = par::map(pod_set, |&t| {
        let clock = Instant::now();
        let pencil = problem.pencil(t)?;
        let _x = problem.meter.hold(n * c);
        let cs = pencil.cotree_system()?;
        let _cs = problem.meter.hold(cs.storage());
        let proj = clock.elapsed();
        let clock = Instant::now();
        let (v, vals) = problem.classical_snapshots(&cs, t, k)?;
        Ok((v, vals, clock.elapsed(), proj))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let _hold = problem.meter.hold(c * pod_set.len() * k);
    Ok(gather_snapshots(pod_set, k, c, parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Pod,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisColumn {
    pub origin: Origin,
    /// Parameter of the source snapshot (greedy columns only).
    pub t: Option<f64>,
    /// Mode index from 1 (greedy columns only).
    pub mode: Option<usize>,
    /// Singular value for POD columns, estimator value for greedy columns.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// |C| × N_red with orthonormal columns.
    pub z: DMatrix<f64>,
    pub provenance: Vec<BasisColumn>,
    pub gauge_mode: GaugeMode,
}

impl ReducedBasis {
    pub fn empty(cotree_dim: usize, gauge_mode: GaugeMode) -> Self {
        Self { z: DMatrix::zeros(cotree_dim, 0), provenance: Vec::new(), gauge_mode }
    }

    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cotree_dim(&self) -> usize {
        self.z.nrows()
    }

    /// The first `n` columns.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            z: self.z.columns(0, n).into_owned(),
            provenance: self.provenance[..n].to_vec(),
            gauge_mode: self.gauge_mode,
        }
    }

    /// max |ZᵀZ − I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.len();
        (self.z.transpose() * &self.z - DMatrix::identity(n, n)).amax()
    }

    /// Orthogonalizes `v` against the basis (modified Gram–Schmidt, two
    /// passes) and appends it if what remains has norm at least
    /// [`APPEND_TOL`] relative to `v`. Returns the remaining norm.
    pub fn try_append(&mut self, v: &DVector<f64>, record: BasisColumn) -> Option<f64> {
        let scale = v.norm();
        if scale == 0.0 {
            return None;
        }
        let mut w = v / scale;
        for _ in 0..2 {
            for c in self.z.column_iter() {
                let d = c.dot(&w);
                w.axpy(-d, &c, 1.0);
            }
        }
        let norm = w.norm();
        if norm < APPEND_TOL {
            return None;
        }
        let n = self.len();
        self.z = std::mem::replace(&mut self.z, DMatrix::zeros(0, 0)).insert_column(n, 0.0);
        self.z.set_column(n, &(w / norm));
        self.provenance.push(record);
        Some(norm)
    }

    pub fn provenance_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            gauge_mode: GaugeMode,
            cotree_dim: usize,
            columns: &'a [BasisColumn],
        }
        serde_json::to_string_pretty(&Doc {
            gauge_mode: self.gauge_mode,
            cotree_dim: self.cotree_dim(),
            columns: &self.provenance,
        })
        .expect("provenance serializes")
    }
}

/// Z = leading `n_init` left singular vectors of `y`.
pub fn pod_init(y: &DMatrix<f64>, n_init: usize, gauge_mode: GaugeMode) -> Result<ReducedBasis> {
    let mut basis = ReducedBasis::empty(y.nrows(), gauge_mode);
    if n_init == 0 {
        return Ok(basis);
    }
    let available = y.nrows().min(y.ncols());
    if n_init > available {
        return Err(Error::RankDeficientSnapshots { requested: n_init, rank: available });
    }
    let svd = y.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s1 = svd.singular_values[order[0]];
    let rank = order.iter().take_while(|&&i| s1 > 0.0 && svd.singular_values[i] / s1 >= POD_RANK_TOL).count();
    if rank < n_init {
        return Err(Error::RankDeficientSnapshots { requested: n_init, rank });
    }
    let mut z = DMatrix::zeros(y.nrows(), n_init);
    for (c, &i) in order.iter().take(n_init).enumerate() {
        let mut col = u.column(i).into_owned();
        // fix the sign so the largest entry is positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        z.set_column(c, &col);
        basis.provenance.push(BasisColumn { origin: Origin::Pod, t: None, mode: None, value: svd.singular_values[i] });
    }
    basis.z = z;
    Ok(basis)
}

/// Dense reduced pencil (Ã, B̃).
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Leading principal n×n block, i.e. the system of the first n basis
    /// columns.
    pub fn leading(&self, n: usize) -> Self {
        Self { a: self.a.view((0, 0), (n, n)).into_owned(), b: self.b.view((0, 0), (n, n)).into_owned() }
    }

    /// The `count` lowest reduced eigenpairs (fewer if the system is smaller).
    pub fn solve(&self, count: usize) -> Result<EigenSolution> {
        let mut sol = solve_dense_gevp(&self.a, &self.b)?;
        sol.truncate(count.min(sol.len()));
        Ok(sol)
    }
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Factored mixed-gauge evaluation at one parameter: keeps the N × N_red
/// blocks needed for residuals and upscaling.
#[derive(Debug, Clone)]
pub struct MixedEvaluation {
    pub system: ReducedSystem,
    /// Ẑ = B⁻¹HᵀZ.
    pub z_hat: DMatrix<f64>,
    /// AẐ.
    pub a_z_hat: DMatrix<f64>,
    /// HᵀZ (= BẐ).
    pub ht_z: DMatrix<f64>,
}

/// Ã = ẐᵀAẐ and B̃ = ẐᵀHᵀZ with Ẑ = B⁻¹HᵀZ from one block solve.
pub fn reduced_matrices_mixed(pencil: &GaugedPencil, z: &DMatrix<f64>) -> Result<MixedEvaluation> {
    let ht_z = pencil.h.transpose_apply(z);
    let z_hat = pencil.b_factor()?.solve_block(&ht_z);
    let a_z_hat = pencil.pair.a.mul_dense(&z_hat);
    let a = symmetrized(z_hat.transpose() * &a_z_hat);
    let b = symmetrized(z_hat.transpose() * &ht_z);
    Ok(MixedEvaluation { system: ReducedSystem { a, b }, z_hat, a_z_hat, ht_z })
}

impl MixedEvaluation {
    /// ‖AẐṽᵢ − λ̃ᵢHᵀZṽᵢ‖₂ for the first `count` pairs of `sol`.
    pub fn residual_norms(&self, sol: &EigenSolution, count: usize) -> Vec<f64> {
        (0..count.min(sol.len()))
            .map(|i| {
                let v = sol.vectors.column(i);
                (&self.a_z_hat * v - (&self.ht_z * v) * sol.values[i]).norm()
            })
            .collect()
    }

    /// Full-space vectors Ẑṽ of the reduced eigenvectors.
    pub fn upscale(&self, sol: &EigenSolution) -> DMatrix<f64> {
        &self.z_hat * &sol.vectors
    }

    pub fn storage(&self) -> usize {
        self.z_hat.len() + self.a_z_hat.len() + self.ht_z.len()
    }
}

/// ZᵀÂZ, ZᵀB̂Z.
pub fn reduced_matrices_classical(cs: &CotreeSystem, z: &DMatrix<f64>) -> ReducedSystem {
    ReducedSystem { a: symmetrized(z.transpose() * (&cs.a_hat * z)), b: symmetrized(z.transpose() * (&cs.b_hat * z)) }
}

/// ‖ÂZṽᵢ − λ̃ᵢB̂Zṽᵢ‖₂ in cotree space.
pub fn classical_residual_norms(cs: &CotreeSystem, z: &DMatrix<f64>, sol: &EigenSolution, count: usize) -> Vec<f64> {
    let x = z * &sol.vectors;
    (0..count.min(sol.len()))
        .map(|i| {
            let v = x.column(i);
            (&cs.a_hat * v - (&cs.b_hat * v) * sol.values[i]).norm()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub t: f64,
    /// Mode index from 1.
    pub mode: usize,
    pub lambda: f64,
    pub residual_norm: f64,
    pub gap: f64,
    pub eta: f64,
}

/// η = ‖r‖²/(λ̃·gap), the gap taken to the nearest other of the first K+1
/// reduced eigenvalues and floored at 1e−8·λ̃_K.
pub fn error_estimator(t: f64, values: &[f64], residual_norms: &[f64], k: usize) -> Vec<EstimatorRow> {
    let m = values.len().min(k + 1);
    let count = residual_norms.len().min(k).min(m);
    if count == 0 {
        return Vec::new();
    }
    let floor = GAP_FLOOR * values[k.min(m) - 1].abs();
    (0..count)
        .map(|i| {
            let gap = (0..m)
                .filter(|&j| j != i)
                .map(|j| (values[j] - values[i]).abs())
                .fold(f64::INFINITY, f64::min)
                .max(floor);
            let gap = if gap.is_finite() { gap } else { floor };
            let r = residual_norms[i];
            EstimatorRow {
                t,
                mode: i + 1,
                lambda: values[i],
                residual_norm: r,
                gap,
                eta: r * r / (values[i].abs() * gap),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbSettings {
    pub k: usize,
    pub n_init: usize,
    pub n_max: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    /// Snapshot appended to the basis.
    Added,
    /// Snapshot already in the span; candidate skipped.
    Exhausted,
    /// Maximum estimator at or below tolerance.
    Converged,
    /// Basis reached N_max.
    Saturated,
    /// No candidate left to add.
    Stalled,
}

impl StepAction {
    pub fn as_str(self) -> &'static str {
        match self {
            StepAction::Added => "added",
            StepAction::Exhausted => "exhausted",
            StepAction::Converged => "converged",
            StepAction::Saturated => "saturated",
            StepAction::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub iteration: usize,
    /// Parameter of the step's candidate, or of the estimator argmax on a
    /// stopping step; `None` when there are no candidates at all.
    pub t: Option<f64>,
    /// Mode index from 1.
    pub mode: Option<usize>,
    pub max_eta: f64,
    /// Basis size after the step.
    pub n_red: usize,
    pub action: StepAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyLog {
    pub steps: Vec<GreedyStep>,
    pub final_max_eta: f64,
    /// Set when every candidate was exhausted before reaching the tolerance.
    pub exhausted: bool,
    pub iterations: usize,
}

impl GreedyLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,t,mode,max_eta,n_red,action\n");
        for st in &self.steps {
            let t = st.t.map(|t| format!("{t:?}")).unwrap_or_default();
            let mode = st.mode.map(|m| m.to_string()).unwrap_or_default();
            writeln!(s, "{},{t},{mode},{:e},{},{}", st.iteration, st.max_eta, st.n_red, st.action.as_str())
                .expect("write to string");
        }
        s
    }
}

/// Per-parameter data the greedy sweep reuses across iterations.
enum TrainingData {
    Mixed(Vec<GaugedPencil>),
    Classical(Vec<CotreeSystem>),
}

impl TrainingData {
    fn prepare(problem: &RbProblem, greedy_set: &[f64], mode: GaugeMode) -> Result<Self> {
        Ok(match mode {
            GaugeMode::Mixed => TrainingData::Mixed(
                par::map(greedy_set, |&t| {
                    let p = problem.pencil(t)?;
                    p.b_factor()?;
                    Ok(p)
                })
                .into_iter()
                .collect::<Result<_>>()?,
            ),
            GaugeMode::Classical => TrainingData::Classical(
                par::map(greedy_set, |&t| problem.pencil(t)?.cotree_system()).into_iter().collect::<Result<_>>()?,
            ),
        })
    }

    fn storage(&self) -> usize {
        match self {
            TrainingData::Mixed(_) => 0,
            TrainingData::Classical(c) => c.iter().map(CotreeSystem::storage).sum(),
        }
    }

    /// Estimator rows for every (t, i), ordered by t then i.
    fn sweep(&self, problem: &RbProblem, greedy_set: &[f64], z: &DMatrix<f64>, k: usize) -> Result<Vec<EstimatorRow>> {
        let idx: Vec<usize> = (0..greedy_set.len()).collect();
        let rows = par::map(&idx, |&j| -> Result<Vec<EstimatorRow>> {
            let t = greedy_set[j];
            match self {
                TrainingData::Mixed(p) => {
                    let _hold = problem.meter.hold(3 * problem.dim() * z.ncols());
                    let ev = reduced_matrices_mixed(&p[j], z)?;
                    let sol = ev.system.solve(k + 1)?;
                    Ok(error_estimator(t, &sol.values, &ev.residual_norms(&sol, k), k))
                }
                TrainingData::Classical(c) => {
                    let rs = reduced_matrices_classical(&c[j], z);
                    let sol = rs.solve(k + 1)?;
                    Ok(error_estimator(t, &sol.values, &classical_residual_norms(&c[j], z, &sol, k), k))
                }
            }
        });
        let mut out = Vec::with_capacity(greedy_set.len() * k);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Unit-norm cotree vectors of the first `k` high-fidelity modes at
    /// greedy parameter `j`.
    fn high_fidelity(&self, problem: &RbProblem, greedy_set: &[f64], j: usize, k: usize) -> Result<DMatrix<f64>> {
        let t = greedy_set[j];
        match self {
            TrainingData::Mixed(p) => Ok(problem.mixed_snapshots(&p[j], t, k)?.0),
            TrainingData::Classical(c) => Ok(problem.classical_snapshots(&c[j], t, k)?.0),
        }
    }
}

/// Greedy enrichment over `greedy_set` driven by the residual estimator.
pub fn greedy_enrich(
    problem: &RbProblem,
    mut basis: ReducedBasis,
    greedy_set: &[f64],
    settings: &RbSettings,
) -> Result<(ReducedBasis, GreedyLog)> {
    let k = settings.k;
    let mode = basis.gauge_mode;
    let data = TrainingData::prepare(problem, greedy_set, mode)?;
    let _cache = problem.meter.hold(data.storage());
    let mut hf_cache: HashMap<usize, DMatrix<f64>> = HashMap::new();
    let mut exhausted: HashSet<(usize, usize)> = HashSet::new();
    let mut log = GreedyLog { steps: Vec::new(), final_max_eta: f64::NAN, exhausted: false, iterations: 0 };
    let mut iteration = 0;
    loop {
        let rows = if greedy_set.is_empty() || basis.is_empty() {
            Vec::new()
        } else {
            data.sweep(problem, greedy_set, &basis.z, k)?
        };
        let max_eta = if basis.is_empty() && !greedy_set.is_empty() {
            f64::INFINITY
        } else {
            rows.iter().map(|r| r.eta).fold(0.0, f64::max)
        };
        log.final_max_eta = max_eta;
        debug!("greedy iteration {iteration}: N_red = {}, max eta = {max_eta:e}", basis.len());
        // candidates by descending eta, ties by (t, i) through the stable sort
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].eta.total_cmp(&rows[a].eta));
        let n_red = basis.len();
        let top = order.first().map(|&r| &rows[r]);
        let stop =
            |action| GreedyStep { iteration, t: top.map(|r| r.t), mode: top.map(|r| r.mode), max_eta, n_red, action };
        if max_eta <= settings.tol {
            log.steps.push(stop(StepAction::Converged));
            break;
        }
        if basis.len() >= settings.n_max {
            log.steps.push(stop(StepAction::Saturated));
            break;
        }
        let mut added = false;
        for &r in &order {
            let j = r / k;
            let i = rows[r].mode - 1;
            if exhausted.contains(&(j, i)) {
                continue;
            }
            let hf = match hf_cache.get(&j) {
                Some(v) => v,
                None => {
                    let v = data.high_fidelity(problem, greedy_set, j, k)?;
                    hf_cache.entry(j).or_insert(v)
                }
            };
            let record =
                BasisColumn { origin: Origin::Greedy, t: Some(rows[r].t), mode: Some(i + 1), value: rows[r].eta };
            let step =
                |action, n_red| GreedyStep { iteration, t: Some(rows[r].t), mode: Some(i + 1), max_eta, n_red, action };
            if basis.try_append(&hf.column(i).into_owned(), record).is_some() {
                log.steps.push(step(StepAction::Added, basis.len()));
                added = true;
                break;
            }
            exhausted.insert((j, i));
            log.steps.push(step(StepAction::Exhausted, basis.len()));
        }
        if !added {
            warn!("greedy stalled: every candidate is already in the span (max eta {max_eta:e})");
            log.steps.push(stop(StepAction::Stalled));
            log.exhausted = true;
            break;
        }
        iteration += 1;
    }
    log.iterations = iteration;
    info!("greedy finished after {iteration} iterations: N_red = {}, max eta = {:e}", basis.len(), log.final_max_eta);
    Ok((basis, log))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub evp_full: f64,
    pub projection: f64,
    pub pod: f64,
    pub greedy: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.evp_full + self.projection + self.pod + self.greedy
    }
}

#[derive(Debug, Clone)]
pub struct RbBuild {
    pub basis: ReducedBasis,
    pub log: GreedyLog,
    /// Seconds per phase.
    pub times: PhaseTimes,
    pub wall_time: f64,
    pub snapshot_eigenvalues: Vec<f64>,
    pub peak_storage: usize,
}

/// Snapshots, POD and greedy enrichment for one gauge.
pub fn build_basis(
    problem: &RbProblem,
    sets: &TrainingSets,
    settings: &RbSettings,
    mode: GaugeMode,
) -> Result<RbBuild> {
    if settings.k == 0 {
        return Err(Error::InvalidArgument("mode count K must be at least 1".into()));
    }
    if settings.n_init > settings.n_max {
        return Err(Error::InvalidArgument(format!("N_init = {} exceeds N_max = {}", settings.n_init, settings.n_max)));
    }
    let overlap = sets.overlap();
    if overlap > 0 {
        info!("{overlap} greedy training parameters coincide with POD parameters");
    }
    problem.meter.reset_peak();
    let start = Instant::now();
    let snaps = match mode {
        GaugeMode::Mixed => collect_snapshots(problem, &sets.pod_set, settings.k)?,
        GaugeMode::Classical => collect_snapshots_classical(problem, &sets.pod_set, settings.k)?,
    };
    let clock = Instant::now();
    let basis = {
        let _y = problem.meter.hold(2 * snaps.y.len());
        pod_init(&snaps.y, settings.n_init, mode)?
    };
    let pod = clock.elapsed();
    let clock = Instant::now();
    let (basis, log) = greedy_enrich(problem, basis, &sets.greedy_set, settings)?;
    let greedy = clock.elapsed();
    Ok(RbBuild {
        basis,
        log,
        times: PhaseTimes {
            evp_full: snaps.evp_time.as_secs_f64(),
            projection: snaps.projection_time.as_secs_f64(),
            pod: pod.as_secs_f64(),
            greedy: greedy.as_secs_f64(),
        },
        wall_time: start.elapsed().as_secs_f64(),
        snapshot_eigenvalues: snaps.eigenvalues,
        peak_storage: problem.meter.peak(),
    })
}

/// The classical-gauge baseline: [`build_basis`] on the dense cotree system.
pub fn classical_pipeline(problem: &RbProblem, sets: &TrainingSets, settings: &RbSettings) -> Result<RbBuild> {
    build_basis(problem, sets, settings, GaugeMode::Classical)
}

/// Reduced system of `basis` at `t`, in the basis' own gauge.
pub fn reduced_system(problem: &RbProblem, basis: &ReducedBasis, t: f64) -> Result<ReducedSystem> {
    let pencil = problem.pencil(t)?;
    match basis.gauge_mode {
        GaugeMode::Mixed => {
            let _hold = problem.meter.hold(3 * problem.dim() * basis.len());
            Ok(reduced_matrices_mixed(&pencil, &basis.z)?.system)
        }
        GaugeMode::Classical => Ok(reduced_matrices_classical(&pencil.cotree_system()?, &basis.z)),
    }
}

/// Lowest `k` full-order eigenvalues at each parameter.
pub fn reference_eigenvalues(problem: &RbProblem, ts: &[f64], k: usize) -> Result<Vec<Vec<f64>>> {
    par::map(ts, |&t| Ok(problem.full_solve(t, k)?.values)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub n_red: usize,
    /// Mean relative error of eigenvalue i over the evaluation set.
    pub per_mode: Vec<f64>,
    /// Mean over modes of `per_mode`.
    pub average: f64,
}

/// Mean relative eigenvalue errors of every basis prefix of size K..=N_red
/// against `reference`. Nested prefixes give leading blocks of one reduced
/// system per parameter.
pub fn error_by_basis_size(
    problem: &RbProblem,
    basis: &ReducedBasis,
    ts: &[f64],
    reference: &[Vec<f64>],
    k: usize,
) -> Result<Vec<ErrorPoint>> {
    if reference.len() != ts.len() {
        return Err(Error::DimensionMismatch(format!("{} parameters, {} reference rows", ts.len(), reference.len())));
    }
    let sizes: Vec<usize> = (k.max(1)..=basis.len()).collect();
    let idx: Vec<usize> = (0..ts.len()).collect();
    let per_t = par::map(&idx, |&j| -> Result<Vec<Vec<f64>>> {
        let full = reduced_system(problem, basis, ts[j])?;
        sizes
            .iter()
            .map(|&n| {
                let sol = full.leading(n).solve(k)?;
                Ok((0..k).map(|i| ((sol.values[i] - reference[j][i]) / reference[j][i]).abs()).collect())
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let m = ts.len().max(1) as f64;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(s, &n_red)| {
            let per_mode: Vec<f64> = (0..k).map(|i| per_t.iter().map(|e| e[s][i]).sum::<f64>() / m).collect();
            let average = per_mode.iter().sum::<f64>() / k as f64;
            ErrorPoint { n_red, per_mode, average }
        })
        .collect())
}

/// Mean of the last `window` values at each position (fewer at the start).
pub fn trailing_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
