//! Run configuration: a flat TOML file whose keys mirror the experiment
//! knobs. Unknown keys are rejected; every key has a default.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use maxwell_rb::rb::{random_set, GaugeMode, HPolicy, RbProblem, RbSettings, TrainingSets};
use maxwell_rb::tracking::{Matching, TrackingOptions};
use maxwell_rb::{brick_eigenvalues, CavityMesh, ProjectionMethod};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Brick edge lengths at t = 0 and t = 1.
    pub dims0: [f64; 3],
    pub dims1: [f64; 3],
    pub resolution: [usize; 3],
    pub k: usize,
    pub n_pod: usize,
    pub n_train: usize,
    pub n_init: usize,
    pub n_max: usize,
    pub tol: f64,
    /// Eigenvalues below this fraction of the analytic first eigenvalue at
    /// t = 0 count as gradient modes.
    pub lambda_cut_factor: f64,
    pub gauge: GaugeMode,
    pub h_policy: HPolicy,
    pub projection: ProjectionMethod,
    /// Deflate range(G) inside the sparse Krylov iteration.
    pub deflation: bool,
    pub threshold: f64,
    pub initial_steps: usize,
    pub max_depth: usize,
    pub matching: Matching,
    pub eval_set_size: usize,
    /// Timed repetitions in the benchmark (after one warm-up run).
    pub repetitions: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims0: [1.0, 1.1, 1.2],
            dims1: [1.0, 1.1, 0.6],
            resolution: [6, 6, 6],
            k: 5,
            n_pod: 20,
            n_train: 50,
            n_init: 5,
            n_max: 60,
            tol: 1e-10,
            lambda_cut_factor: 0.1,
            gauge: GaugeMode::Mixed,
            h_policy: HPolicy::PerParameter,
            projection: ProjectionMethod::CotreeBlock,
            deflation: false,
            threshold: 0.9,
            initial_steps: 10,
            max_depth: 10,
            matching: Matching::Greedy,
            eval_set_size: 50,
            repetitions: 5,
            seed: 1,
            output: PathBuf::from("out"),
        }
    }
}

fn key_line(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

impl RunConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| source[..s.start].matches('\n').count() + 1);
            ConfigError { line, key: "config".into(), message: e.message().trim().to_string() }
        })?;
        config.validate().map_err(|mut e| {
            e.line = key_line(source, &e.key);
            e
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&source)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, message: String| Err(ConfigError { line: None, key: key.into(), message });
        for (key, dims) in [("dims0", self.dims0), ("dims1", self.dims1)] {
            if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return fail(key, format!("edge lengths must be positive, got {dims:?}"));
            }
        }
        if self.resolution.contains(&0) {
            return fail("resolution", format!("cell counts must be at least 1, got {:?}", self.resolution));
        }
        for (key, v) in [
            ("k", self.k),
            ("n_pod", self.n_pod),
            ("n_train", self.n_train),
            ("n_init", self.n_init),
            ("n_max", self.n_max),
            ("eval_set_size", self.eval_set_size),
            ("repetitions", self.repetitions),
        ] {
            if v == 0 {
                return fail(key, "must be positive".into());
            }
        }
        if self.n_init > self.n_pod * self.k {
            return fail("n_init", format!("{} exceeds n_pod * k = {}", self.n_init, self.n_pod * self.k));
        }
        if self.n_init > self.n_max {
            return fail("n_init", format!("{} exceeds n_max = {}", self.n_init, self.n_max));
        }
        if !(self.tol > 0.0) {
            return fail("tol", format!("must be positive (inf allowed), got {}", self.tol));
        }
        if !(self.lambda_cut_factor > 0.0 && self.lambda_cut_factor < 1.0) {
            return fail("lambda_cut_factor", format!("must lie in (0, 1), got {}", self.lambda_cut_factor));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail("threshold", format!("must lie in [0, 1], got {}", self.threshold));
        }
        if self.initial_steps < 2 {
            return fail("initial_steps", format!("must be at least 2, got {}", self.initial_steps));
        }
        Ok(())
    }

    pub fn meshes(&self) -> maxwell_rb::Result<(CavityMesh, CavityMesh)> {
        let m0 = CavityMesh::build(self.dims0, self.resolution)?;
        let m1 = CavityMesh::build(self.dims1, self.resolution)?;
        Ok((m0, m1))
    }

    /// The parametrized morph with solver, gauge and projection settings
    /// applied.
    pub fn problem(&self) -> maxwell_rb::Result<RbProblem> {
        let (m0, m1) = self.meshes()?;
        let mut p = RbProblem::from_meshes(&m0, &m1)?;
        p.solver.lambda_cut = self.lambda_cut_factor * brick_eigenvalues(self.dims0, 1)[0];
        p.solver.seed = self.seed;
        if self.deflation {
            p.solver.deflation = Some(Arc::new(m0.discrete_gradient().matrix));
        }
        p.h_policy = self.h_policy;
        p.projection = self.projection;
        Ok(p)
    }

    pub fn settings(&self) -> RbSettings {
        RbSettings { k: self.k, n_init: self.n_init, n_max: self.n_max, tol: self.tol }
    }

    pub fn training_sets(&self) -> TrainingSets {
        TrainingSets::new(self.n_pod, self.n_train, self.seed)
    }

    pub fn eval_set(&self) -> Vec<f64> {
        random_set(self.eval_set_size, self.seed)
    }

    pub fn tracking(&self) -> TrackingOptions {
        TrackingOptions {
            threshold: self.threshold,
            initial_steps: self.initial_steps,
            max_depth: self.max_depth,
            matching: self.matching,
            ..TrackingOptions::new(self.k)
        }
    }
}
