//! Eigenmode tracking along the morph parameter.
//!
//! K columns follow physical modes from t = 0 to t = 1. Each step matches
//! the eigenpairs at both ends by the modulus of their mass inner product.
//! Steps whose matched correlations fall below the threshold are bisected.
//! A window of K + margin pairs is solved so that a mode leaving the lowest
//! K can be replaced by the one entering; the column then continues with the
//! entering mode (a handoff). Exactly degenerate clusters are rotated onto
//! the previous vectors before matching, since the solver's basis inside
//! such an eigenspace is arbitrary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rb::{reduced_system, RbProblem, ReducedBasis};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    #[default]
    Greedy,
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingOptions {
    pub k: usize,
    pub threshold: f64,
    pub initial_steps: usize,
    pub max_depth: usize,
    pub matching: Matching,
    /// Extra pairs solved above the lowest K.
    pub margin: usize,
    /// Relative eigenvalue distance below which pairs count as degenerate.
    pub degeneracy_tol: f64,
}

impl TrackingOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            threshold: 0.9,
            initial_steps: 10,
            max_depth: 10,
            matching: Matching::Greedy,
            margin: 2,
            degeneracy_tol: 1e-8,
        }
    }
}

/// Mass inner product at one parameter.
#[derive(Debug, Clone)]
pub enum Metric {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl Metric {
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Metric::Dense(m) => m * x,
            Metric::Sparse(m) => m.mul_dense(x),
        }
    }
}

/// Eigenpairs of the window at one parameter, vectors normalized in `metric`.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub t: f64,
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handoff {
    pub t: f64,
    pub column: usize,
    /// Window index (from 0) of the leaving mode at the previous point.
    pub from_index: usize,
    /// Window index of the entering mode at `t`.
    pub to_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRun {
    pub k: usize,
    pub threshold: f64,
    pub grid: Vec<f64>,
    /// λ per grid point and column.
    pub lambdas: Vec<Vec<f64>>,
    /// Correlation of each column's mode to its predecessor (1 at t = 0).
    pub correlations: Vec<Vec<f64>>,
    /// Window index of each column's mode per grid point; a permutation of
    /// 0..K at every point.
    pub mode_of: Vec<Vec<usize>>,
    pub handoffs: Vec<Handoff>,
    pub bisections: usize,
    pub min_step: f64,
    /// Wall time per accepted step in seconds, including rejected attempts.
    pub step_times: Vec<f64>,
    pub degenerate_clusters: usize,
    pub wall_time: f64,
}

impl TrackingRun {
    /// (t, λ, correlation) along column `m`.
    pub fn trajectory(&self, m: usize) -> Vec<(f64, f64, f64)> {
        (0..self.grid.len()).map(|p| (self.grid[p], self.lambdas[p][m], self.correlations[p][m])).collect()
    }

    pub fn min_correlation(&self) -> f64 {
        self.correlations.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for m in 1..=self.k {
            write!(s, ",lambda{m}").expect("write to string");
        }
        for m in 1..=self.k {
            write!(s, ",corr{m}").expect("write to string");
        }
        s.push('\n');
        for p in 0..self.grid.len() {
            write!(s, "{:?}", self.grid[p]).expect("write to string");
            for v in self.lambdas[p].iter().chain(&self.correlations[p]) {
                write!(s, ",{v:?}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }
}

/// Optimal assignment maximizing the summed weight; rows ≤ columns.
/// Returns the column of each row.
pub fn hungarian(w: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = (w.nrows(), w.ncols());
    assert!(n <= m, "more rows than columns");
    // minimize -w with row/column potentials (1-based, column 0 is a sentinel)
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = -w[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Greedy assignment by descending weight, ties by (row, column).
pub fn greedy_assignment(w: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = (w.nrows(), w.ncols());
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    entries.sort_by(|a, b| w[*b].total_cmp(&w[*a]));
    let mut row = vec![usize::MAX; n];
    let mut col_used = vec![false; m];
    let mut left = n.min(m);
    for (i, j) in entries {
        if left == 0 {
            break;
        }
        if row[i] == usize::MAX && !col_used[j] {
            row[i] = j;
            col_used[j] = true;
            left -= 1;
        }
    }
    row
}

/// Correlations |xᵢᵀ M(t₀) yⱼ| with y renormalized in M(t₀).
fn correlation_matrix(prev: &TrackState, next: &TrackState) -> DMatrix<f64> {
    let my = prev.metric.apply(&next.vectors);
    let mut c = prev.vectors.transpose() * &my;
    for j in 0..c.ncols() {
        let norm = next.vectors.column(j).dot(&my.column(j)).max(0.0).sqrt();
        if norm > 0.0 {
            c.column_mut(j).unscale_mut(norm);
        }
    }
    c.abs()
}

/// Clusters of consecutive eigenvalues within `tol` relative distance.
fn clusters(values: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || (values[i] - values[i - 1]).abs() > tol * values[i].abs().max(values[i - 1].abs()) {
            if i - start > 1 {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

/// Rotates each degenerate cluster of `next` onto the previous vectors it
/// overlaps most (orthogonal Procrustes). Returns the number of clusters.
fn align_degenerate(prev: &TrackState, next: &mut TrackState, tol: f64) -> usize {
    let groups = clusters(&next.values, tol);
    for &(a, b) in &groups {
        let s = b - a;
        let y = next.vectors.columns(a, s).into_owned();
        let p = prev.vectors.transpose() * prev.metric.apply(&y);
        // previous vectors with the largest overlap with the cluster
        let mut rows: Vec<usize> = (0..p.nrows()).collect();
        rows.sort_by(|&i, &j| p.row(j).norm_squared().total_cmp(&p.row(i).norm_squared()).then(i.cmp(&j)));
        rows.truncate(s);
        rows.sort_unstable();
        let ps = p.select_rows(&rows);
        let svd = ps.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
        let q = vt.transpose() * u.transpose();
        next.vectors.columns_mut(a, s).copy_from(&(y * q));
    }
    groups.len()
}

struct StepOutcome {
    /// Window index at the new point for each column.
    mode_of: Vec<usize>,
    correlations: Vec<f64>,
    handoffs: Vec<(usize, usize, usize)>,
    worst: f64,
}

fn match_step(
    prev: &TrackState,
    next: &TrackState,
    prev_mode: &[usize],
    opts: &TrackingOptions,
) -> Result<StepOutcome> {
    let k = opts.k;
    let c = correlation_matrix(prev, next);
    if c.nrows() > c.ncols() || c.ncols() < k {
        return Err(Error::InvalidArgument(format!("window of {} pairs cannot hold {} tracked modes", c.ncols(), k)));
    }
    let assign = match opts.matching {
        Matching::Greedy => greedy_assignment(&c),
        Matching::Hungarian => hungarian(&c),
    };
    let mut owner = vec![usize::MAX; c.ncols()];
    for (i, &j) in assign.iter().enumerate() {
        owner[j] = i;
    }
    let mut worst = f64::INFINITY;
    let mut mode_of = vec![usize::MAX; k];
    let mut correlations = vec![0.0; k];
    let mut free = Vec::new();
    for (col, &i) in prev_mode.iter().enumerate() {
        let j = assign[i];
        worst = worst.min(c[(i, j)]);
        if j < k {
            mode_of[col] = j;
            correlations[col] = c[(i, j)];
        } else {
            free.push((col, i));
        }
    }
    // modes entering the lowest K take over the freed columns in order
    let mut handoffs = Vec::new();
    let entering: Vec<usize> = (0..k).filter(|j| !mode_of.contains(j)).collect();
    for ((col, from), j) in free.into_iter().zip(entering) {
        let i = owner[j];
        worst = worst.min(c[(i, j)]);
        mode_of[col] = j;
        correlations[col] = c[(i, j)];
        handoffs.push((col, from, j));
    }
    Ok(StepOutcome { mode_of, correlations, handoffs, worst })
}

/// Runs the tracking protocol with `solve` providing the window at each t.
pub fn track(solve: &dyn Fn(f64) -> Result<TrackState>, opts: &TrackingOptions) -> Result<TrackingRun> {
    if opts.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if opts.initial_steps < 1 {
        return Err(Error::InvalidArgument("initial_steps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&opts.threshold) {
        return Err(Error::InvalidArgument(format!("threshold {} outside [0, 1)", opts.threshold)));
    }
    let start = Instant::now();
    let k = opts.k;
    let mut current = solve(0.0)?;
    if current.values.len() < k {
        return Err(Error::TooFewEigenvalues { found: current.values.len(), wanted: k, cut: 0.0 });
    }
    let mut run = TrackingRun {
        k,
        threshold: opts.threshold,
        grid: vec![0.0],
        lambdas: vec![current.values[..k].to_vec()],
        correlations: vec![vec![1.0; k]],
        mode_of: vec![(0..k).collect()],
        handoffs: Vec::new(),
        bisections: 0,
        min_step: f64::INFINITY,
        step_times: Vec::new(),
        degenerate_clusters: 0,
        wall_time: 0.0,
    };
    let mut mode: Vec<usize> = (0..k).collect();
    let n = opts.initial_steps;
    let mut cache: HashMap<u64, TrackState> = HashMap::new();
    for s in 1..=n {
        let target = s as f64 / n as f64;
        // stack of pending right endpoints with the bisection depth of the
        // interval that ends there
        let mut stack = vec![(target, 0usize)];
        let mut clock = Instant::now();
        while let Some(&(t1, depth)) = stack.last() {
            let mut next = match cache.remove(&t1.to_bits()) {
                Some(st) => st,
                None => solve(t1)?,
            };
            run.degenerate_clusters += align_degenerate(&current, &mut next, opts.degeneracy_tol);
            let out = match_step(&current, &next, &mode, opts)?;
            if out.worst >= opts.threshold {
                stack.pop();
                run.min_step = run.min_step.min(t1 - current.t);
                for &(column, from_index, to_index) in &out.handoffs {
                    run.handoffs.push(Handoff { t: t1, column, from_index, to_index });
                }
                run.grid.push(t1);
                run.lambdas.push(out.mode_of.iter().map(|&j| next.values[j]).collect());
                run.correlations.push(out.correlations);
                run.mode_of.push(out.mode_of.clone());
                run.step_times.push(clock.elapsed().as_secs_f64());
                clock = Instant::now();
                mode = out.mode_of;
                current = next;
            } else if depth < opts.max_depth {
                debug!("bisecting [{}, {t1}]: correlation {:.4}", current.t, out.worst);
                run.bisections += 1;
                let mid = 0.5 * (current.t + t1);
                cache.insert(t1.to_bits(), next);
                stack.last_mut().expect("nonempty stack").1 = depth + 1;
                stack.push((mid, depth + 1));
            } else {
                return Err(Error::TrackingFailed {
                    t0: current.t,
                    t1,
                    correlation: out.worst,
                    threshold: opts.threshold,
                });
            }
        }
    }
    run.wall_time = start.elapsed().as_secs_f64();
    Ok(run)
}

fn window(values: &[f64], want: usize, tol: f64) -> usize {
    let mut n = want.min(values.len());
    while n > 0 && n < values.len() && (values[n] - values[n - 1]).abs() <= tol * values[n].abs() {
        n += 1;
    }
    n
}

/// Tracking on the reduced system of `basis`.
pub fn track_reduced(problem: &RbProblem, basis: &ReducedBasis, opts: &TrackingOptions) -> Result<TrackingRun> {
    let solve = |t: f64| -> Result<TrackState> {
        let rs = reduced_system(problem, basis, t)?;
        let sol = rs.solve(rs.dim())?;
        let w = window(&sol.values, opts.k + opts.margin, opts.degeneracy_tol);
        Ok(TrackState {
            t,
            values: sol.values[..w].to_vec(),
            vectors: sol.vectors.columns(0, w).into_owned(),
            metric: Metric::Dense(rs.b),
        })
    };
    track(&solve, opts)
}

/// Tracking on the full sparse system.
pub fn track_full(problem: &RbProblem, opts: &TrackingOptions) -> Result<TrackingRun> {
    let solve = |t: f64| -> Result<TrackState> {
        let pair = problem.system.at(t)?;
        let sol = crate::eigen::solve_sparse_gevp(&pair, opts.k + opts.margin, &problem.solver)?;
        Ok(TrackState { t, values: sol.values, vectors: sol.vectors, metric: Metric::Sparse(pair.b) })
    };
    track(&solve, opts)
}
