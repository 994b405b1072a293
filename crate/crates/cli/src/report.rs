//! Benchmark report: phase timings, storage counters, DoF counts and the
//! eigenvalue error study.

use std::fmt::Write as _;

use maxwell_rb::rb::{ErrorPoint, GreedyLog};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub const PROJECTION: &str = "Projection to Cotree DoFs";
pub const POD: &str = "POD";
pub const GREEDY: &str = "Greedy";
pub const TRACKING_RB: &str = "Tracking (RB)";
pub const EVP_FULL: &str = "EVP (full, cotree/sparse)";
pub const EVP_RB: &str = "EVP (RB)";
pub const TRACKING_FULL: &str = "Tracking (full, sparse)";

/// The seven table rows, in table order.
pub const TABLE_ROWS: [&str; 7] = [PROJECTION, POD, GREEDY, TRACKING_RB, EVP_FULL, EVP_RB, TRACKING_FULL];

pub const REDUCED_EVALUATION: &str = "Reduced matrices (RB)";
pub const BUILD_MIXED: &str = "Basis construction (mixed)";
pub const BUILD_CLASSICAL: &str = "Basis construction (classical)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub label: String,
    /// Median over the timed repetitions; `None` if the phase failed.
    pub median_seconds: Option<f64>,
    pub samples: Vec<f64>,
}

impl PhaseRow {
    pub fn new(label: &str, samples: Vec<f64>) -> Self {
        Self { label: label.to_string(), median_seconds: median(&samples), samples }
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofCounts {
    pub n: usize,
    pub interior_vertices: usize,
    pub cotree: usize,
    pub n_red_mixed: Option<usize>,
    pub n_red_classical: Option<usize>,
}

/// Peak dense entries held during basis construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageCounters {
    pub mixed_peak: Option<usize>,
    pub classical_peak: Option<usize>,
    /// |C|², held by any dense cotree system.
    pub cotree_squared: usize,
    /// 10·N·N_red for the mixed basis.
    pub mixed_bound: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeError {
    /// Mode index from 1.
    pub mode: usize,
    pub mixed: Option<f64>,
    pub classical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    /// EVP(full) / EVP(RB).
    pub evp: Option<f64>,
    /// EVP(full) / (reduced matrices + EVP(RB)).
    pub evp_with_evaluation: Option<f64>,
    /// Tracking(full) / Tracking(RB).
    pub tracking: Option<f64>,
    /// classical / mixed basis construction.
    pub construction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    /// Krylov iterations of the timed full-order solves.
    pub full_iterations: Vec<usize>,
    pub full_max_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFailure {
    pub phase: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub parallel: bool,
    pub repetitions: usize,
    pub dofs: DofCounts,
    pub phases: Vec<PhaseRow>,
    pub extra_phases: Vec<PhaseRow>,
    pub ratios: Ratios,
    pub storage: StorageCounters,
    /// Mean relative eigenvalue error per mode over the evaluation set, at
    /// the final basis size.
    pub errors: Vec<ModeError>,
    pub sweep_mixed: Vec<ErrorPoint>,
    pub sweep_classical: Vec<ErrorPoint>,
    pub greedy_mixed: Option<GreedyLog>,
    pub greedy_classical: Option<GreedyLog>,
    pub solver: SolverSummary,
    pub failures: Vec<PhaseFailure>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

impl BenchReport {
    pub fn phase(&self, label: &str) -> Option<f64> {
        self.phases.iter().chain(&self.extra_phases).find(|r| r.label == label).and_then(|r| r.median_seconds)
    }

    pub fn compute_ratios(&mut self) {
        let evp_rb = self.phase(EVP_RB);
        let eval = self.phase(REDUCED_EVALUATION);
        self.ratios = Ratios {
            evp: ratio(self.phase(EVP_FULL), evp_rb),
            evp_with_evaluation: ratio(self.phase(EVP_FULL), evp_rb.zip(eval).map(|(a, b)| a + b)),
            tracking: ratio(self.phase(TRACKING_FULL), self.phase(TRACKING_RB)),
            construction: ratio(self.phase(BUILD_CLASSICAL), self.phase(BUILD_MIXED)),
        };
    }

    /// Structural checks run before the report is written.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema version {} != {SCHEMA_VERSION}", self.schema_version));
        }
        let labels: Vec<&str> = self.phases.iter().map(|r| r.label.as_str()).collect();
        if labels != TABLE_ROWS {
            return Err(format!("phase rows {labels:?} do not match the table layout"));
        }
        for row in self.phases.iter().chain(&self.extra_phases) {
            if row.samples.iter().chain(&row.median_seconds).any(|&s| !(s >= 0.0)) {
                return Err(format!("negative or non-finite time in row '{}'", row.label));
            }
        }
        if self.errors.len() != self.config.k {
            return Err(format!("error table has {} rows, expected {}", self.errors.len(), self.config.k));
        }
        if self.errors.iter().enumerate().any(|(i, e)| e.mode != i + 1) {
            return Err("error table modes are not 1..K".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let fmt_s = |v: Option<f64>| v.map(|s| format!("{s:.4e} s")).unwrap_or_else(|| "failed".into());
        let fmt_x = |v: Option<f64>| v.map(|s| format!("{s:.1}x")).unwrap_or_else(|| "n/a".into());
        let fmt_e = |v: Option<f64>| v.map(|s| format!("{s:.3e}")).unwrap_or_else(|| "n/a".into());
        let mut s = String::new();
        let d = &self.dofs;
        let n_red = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            s,
            "DoFs: N = {}, interior vertices = {}, |C| = {}, N_red = {} (mixed) / {} (classical)",
            d.n,
            d.interior_vertices,
            d.cotree,
            n_red(d.n_red_mixed),
            n_red(d.n_red_classical)
        )
        .unwrap();
        writeln!(s, "median of {} repetitions:", self.repetitions).unwrap();
        for row in self.phases.iter().chain(&self.extra_phases) {
            writeln!(s, "  {:<32} {}", row.label, fmt_s(row.median_seconds)).unwrap();
        }
        let r = &self.ratios;
        writeln!(s, "ratios:").unwrap();
        writeln!(s, "  EVP full / RB                    {}", fmt_x(r.evp)).unwrap();
        writeln!(s, "  EVP full / (RB matrices + EVP)   {}", fmt_x(r.evp_with_evaluation)).unwrap();
        writeln!(s, "  tracking full / RB               {}", fmt_x(r.tracking)).unwrap();
        writeln!(s, "  construction classical / mixed   {}", fmt_x(r.construction)).unwrap();
        writeln!(s, "mean relative eigenvalue error:").unwrap();
        writeln!(s, "  mode  mixed       classical").unwrap();
        for e in &self.errors {
            writeln!(s, "  {:<5} {:<11} {}", e.mode, fmt_e(e.mixed), fmt_e(e.classical)).unwrap();
        }
        for f in &self.failures {
            writeln!(s, "FAILED {}: {}", f.phase, f.message).unwrap();
        }
        s
    }
}
