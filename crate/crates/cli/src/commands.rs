//! The subcommands. Each returns the text printed on success; files are
//! written through [`Artifacts`] so a failed command leaves no partial set.

use std::time::Instant;

use log::{info, warn};
use maxwell_rb::rb::{
    build_basis, error_by_basis_size, reduced_system, reference_eigenvalues, GaugeMode, RbBuild, RbProblem,
};
use maxwell_rb::tracking::{track_full, track_reduced, TrackingRun};
use maxwell_rb::{mmio, solve_dense_gevp, CsrMatrix, EigenSolution, GaugedPencil};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::Artifacts;
use crate::report::*;

fn check_t(t: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--t must lie in [0, 1], got {t}")))
    }
}

fn sparse_mtx(m: &CsrMatrix, symmetric: bool) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    if symmetric {
        mmio::write_symmetric(&mut buf, m)?;
    } else {
        mmio::write_general(&mut buf, m)?;
    }
    Ok(buf)
}

fn dense_mtx(m: &DMatrix<f64>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    mmio::write_dense(&mut buf, m)?;
    Ok(buf)
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn commit(artifacts: Artifacts, config: &RunConfig) -> CliResult<String> {
    let paths = artifacts.commit(&config.output)?;
    Ok(paths.iter().map(|p| format!("wrote {}\n", p.display())).collect())
}

/// Lowest K physical modes at `t` in the configured gauge; vectors in the
/// full edge space.
fn physical_modes(problem: &RbProblem, config: &RunConfig, t: f64) -> CliResult<EigenSolution> {
    match config.gauge {
        GaugeMode::Mixed => Ok(problem.full_solve(t, config.k)?),
        GaugeMode::Classical => {
            let pencil: GaugedPencil = problem.pencil(t)?;
            let cs = pencil.cotree_system()?;
            let sol = solve_dense_gevp(&cs.a_hat, &cs.b_hat)?;
            let idx: Vec<usize> =
                (0..sol.len()).filter(|&i| sol.values[i] > problem.solver.lambda_cut).take(config.k).collect();
            if idx.len() < config.k {
                return Err(maxwell_rb::Error::TooFewEigenvalues {
                    found: idx.len(),
                    wanted: config.k,
                    cut: problem.solver.lambda_cut,
                }
                .into());
            }
            let vectors = pencil.upscale(&sol.vectors.select_columns(&idx))?;
            Ok(EigenSolution {
                values: idx.iter().map(|&i| sol.values[i]).collect(),
                residual_norms: vec![0.0; idx.len()],
                vectors,
                b_normalized: true,
                stats: Default::default(),
            })
        }
    }
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    config: &'a RunConfig,
    t: f64,
    dofs: usize,
    eigenvalues: &'a [f64],
    residual_norms: &'a [f64],
    iterations: usize,
}

pub fn solve(config: &RunConfig, t: f64, export: bool) -> CliResult<String> {
    check_t(t)?;
    let problem = config.problem()?;
    let sol = physical_modes(&problem, config, t)?;
    let mut out = format!(
        "t = {t}, N = {}, gauge = {:?}\n  mode  lambda                  sqrt(lambda)\n",
        problem.dim(),
        config.gauge
    );
    for (i, v) in sol.values.iter().enumerate() {
        out.push_str(&format!("  {:<5} {:<23.15e} {:.10}\n", i + 1, v, v.sqrt()));
    }
    if export {
        let pair = problem.system.at(t)?;
        let mut files = Artifacts::new();
        files.add("A.mtx", sparse_mtx(&pair.a, true)?);
        files.add("B.mtx", sparse_mtx(&pair.b, true)?);
        files.add("eigenvectors.mtx", dense_mtx(&sol.vectors)?);
        files.add(
            "solve.json",
            json(&SolveRecord {
                config,
                t,
                dofs: problem.dim(),
                eigenvalues: &sol.values,
                residual_norms: &sol.residual_norms,
                iterations: sol.stats.iterations,
            }),
        );
        out.push_str(&commit(files, config)?);
    }
    Ok(out)
}

pub fn export_matrices(config: &RunConfig, t: f64) -> CliResult<String> {
    check_t(t)?;
    let problem = config.problem()?;
    let (m0, _) = config.meshes()?;
    let pair = problem.system.at(t)?;
    let mut files = Artifacts::new();
    files.add("A.mtx", sparse_mtx(&pair.a, true)?);
    files.add("B.mtx", sparse_mtx(&pair.b, true)?);
    files.add("G.mtx", sparse_mtx(&m0.discrete_gradient().matrix, false)?);
    files.add("gauge.json", json(&problem.gauge));
    let mut out = format!(
        "t = {t}: N = {}, interior vertices = {}, |C| = {}\n",
        problem.dim(),
        m0.num_interior_vertices(),
        problem.cotree_dim()
    );
    out.push_str(&commit(files, config)?);
    Ok(out)
}

fn run_build(problem: &RbProblem, config: &RunConfig, mode: GaugeMode) -> maxwell_rb::Result<RbBuild> {
    build_basis(problem, &config.training_sets(), &config.settings(), mode)
}

#[derive(Serialize)]
struct BuildSummary<'a> {
    config: &'a RunConfig,
    n_red: usize,
    final_max_eta: f64,
    iterations: usize,
    exhausted: bool,
    peak_storage: usize,
    times: maxwell_rb::rb::PhaseTimes,
    wall_time: f64,
}

pub fn build(config: &RunConfig) -> CliResult<String> {
    let problem = config.problem()?;
    let result = run_build(&problem, config, config.gauge)?;
    let mut files = Artifacts::new();
    files.add("basis.mtx", dense_mtx(&result.basis.z)?);
    files.add("provenance.json", result.basis.provenance_json() + "\n");
    files.add("convergence.csv", result.log.to_csv());
    files.add(
        "summary.json",
        json(&BuildSummary {
            config,
            n_red: result.basis.len(),
            final_max_eta: result.log.final_max_eta,
            iterations: result.log.iterations,
            exhausted: result.log.exhausted,
            peak_storage: result.peak_storage,
            times: result.times,
            wall_time: result.wall_time,
        }),
    );
    let mut out = format!(
        "gauge = {:?}: N_red = {}, final max eta = {:e}, {} greedy iterations, {:.3} s\n",
        config.gauge,
        result.basis.len(),
        result.log.final_max_eta,
        result.log.iterations,
        result.wall_time
    );
    out.push_str(&commit(files, config)?);
    Ok(out)
}

#[derive(Serialize)]
struct TrackSummary<'a> {
    config: &'a RunConfig,
    path: &'static str,
    n_red: Option<usize>,
    grid_points: usize,
    bisections: usize,
    min_step: f64,
    min_correlation: f64,
    degenerate_clusters: usize,
    handoffs: &'a [maxwell_rb::tracking::Handoff],
    wall_time: f64,
}

/// Runs the tracker on the reduced system (building the basis first) or on
/// the full one.
pub fn tracking_run(problem: &RbProblem, config: &RunConfig, reduced: bool) -> CliResult<(TrackingRun, Option<usize>)> {
    if reduced {
        let basis = run_build(problem, config, config.gauge)?.basis;
        Ok((track_reduced(problem, &basis, &config.tracking())?, Some(basis.len())))
    } else {
        Ok((track_full(problem, &config.tracking())?, None))
    }
}

pub fn track(config: &RunConfig, reduced: bool) -> CliResult<String> {
    let problem = config.problem()?;
    let (run, n_red) = tracking_run(&problem, config, reduced)?;
    let path = if reduced { "reduced" } else { "full" };
    let mut files = Artifacts::new();
    files.add(format!("trajectory_{path}.csv"), run.to_csv());
    files.add(
        format!("tracking_{path}.json"),
        json(&TrackSummary {
            config,
            path,
            n_red,
            grid_points: run.grid.len(),
            bisections: run.bisections,
            min_step: run.min_step,
            min_correlation: run.min_correlation(),
            degenerate_clusters: run.degenerate_clusters,
            handoffs: &run.handoffs,
            wall_time: run.wall_time,
        }),
    );
    let mut out = format!(
        "{path} tracking: {} grid points, {} bisections, min correlation {:.6}, {:.3} s\n",
        run.grid.len(),
        run.bisections,
        run.min_correlation(),
        run.wall_time
    );
    out.push_str(&commit(files, config)?);
    Ok(out)
}

#[derive(Default)]
struct Samples {
    rows: Vec<(&'static str, Vec<f64>)>,
    failures: Vec<PhaseFailure>,
}

impl Samples {
    fn push(&mut self, label: &'static str, seconds: f64) {
        match self.rows.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(seconds),
            None => self.rows.push((label, vec![seconds])),
        }
    }

    fn fail(&mut self, phase: &str, e: &dyn std::fmt::Display) {
        warn!("{phase} failed: {e}");
        if !self.failures.iter().any(|f| f.phase == phase) {
            self.failures.push(PhaseFailure { phase: phase.to_string(), message: e.to_string() });
        }
    }

    fn row(&self, label: &str) -> PhaseRow {
        let samples = self.rows.iter().find(|(l, _)| *l == label).map(|(_, v)| v.clone()).unwrap_or_default();
        PhaseRow::new(label, samples)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Full and reduced single-parameter solves, averaged over `ts`.
fn time_solves(
    problem: &RbProblem,
    config: &RunConfig,
    build: Option<&RbBuild>,
    ts: &[f64],
    samples: Option<&mut Samples>,
    solver: &mut SolverSummary,
) -> maxwell_rb::Result<()> {
    let (mut full, mut eval, mut evp) = (Vec::new(), Vec::new(), Vec::new());
    solver.full_iterations.clear();
    solver.full_max_residual = None;
    for &t in ts {
        let clock = Instant::now();
        let sol = problem.full_solve(t, config.k)?;
        full.push(clock.elapsed().as_secs_f64());
        solver.full_iterations.push(sol.stats.iterations);
        let worst = sol.residual_norms.iter().copied().fold(0.0, f64::max);
        solver.full_max_residual = Some(solver.full_max_residual.unwrap_or(0.0).max(worst));
        if let Some(b) = build {
            let clock = Instant::now();
            let rs = reduced_system(problem, &b.basis, t)?;
            eval.push(clock.elapsed().as_secs_f64());
            let clock = Instant::now();
            rs.solve(config.k)?;
            evp.push(clock.elapsed().as_secs_f64());
        }
    }
    if let Some(s) = samples {
        s.push(EVP_FULL, mean(&full));
        if build.is_some() {
            s.push(REDUCED_EVALUATION, mean(&eval));
            s.push(EVP_RB, mean(&evp));
        }
    }
    Ok(())
}

/// Single-parameter solves are timed at this many evaluation parameters.
const TIMED_SOLVES: usize = 5;

pub fn bench(config: &RunConfig) -> CliResult<BenchReport> {
    let problem = config.problem()?;
    let (m0, _) = config.meshes()?;
    let eval_set = config.eval_set();
    let timed_ts = &eval_set[..TIMED_SOLVES.min(eval_set.len())];
    let mut s = Samples::default();
    let mut solver = SolverSummary { full_iterations: Vec::new(), full_max_residual: None };
    let mut mixed = None;
    let mut classical = None;

    for rep in 0..=config.repetitions {
        // repetition 0 is the warm-up
        let record = rep > 0;
        info!("bench repetition {rep} of {}", config.repetitions);
        let push = |s: &mut Samples, label, v| {
            if record {
                s.push(label, v)
            }
        };

        match run_build(&problem, config, GaugeMode::Mixed) {
            Ok(b) => {
                push(&mut s, PROJECTION, b.times.projection);
                push(&mut s, POD, b.times.pod);
                push(&mut s, GREEDY, b.times.greedy);
                push(&mut s, BUILD_MIXED, b.wall_time);
                mixed = Some(b);
            }
            Err(e) => s.fail(BUILD_MIXED, &e),
        }
        match run_build(&problem, config, GaugeMode::Classical) {
            Ok(b) => {
                push(&mut s, BUILD_CLASSICAL, b.wall_time);
                classical = Some(b);
            }
            Err(e) => s.fail(BUILD_CLASSICAL, &e),
        }
        if let Some(b) = &mixed {
            match track_reduced(&problem, &b.basis, &config.tracking()) {
                Ok(run) => push(&mut s, TRACKING_RB, run.wall_time),
                Err(e) => s.fail(TRACKING_RB, &e),
            }
        }
        match track_full(&problem, &config.tracking()) {
            Ok(run) => push(&mut s, TRACKING_FULL, run.wall_time),
            Err(e) => s.fail(TRACKING_FULL, &e),
        }
        let target = if record { Some(&mut s) } else { None };
        if let Err(e) = time_solves(&problem, config, mixed.as_ref(), timed_ts, target, &mut solver) {
            s.fail(EVP_FULL, &e);
        }
    }

    info!("error study over {} parameters", eval_set.len());
    let mut sweep_mixed = Vec::new();
    let mut sweep_classical = Vec::new();
    match reference_eigenvalues(&problem, &eval_set, config.k) {
        Ok(reference) => {
            for (build, sweep, phase) in [
                (&mixed, &mut sweep_mixed, "Error study (mixed)"),
                (&classical, &mut sweep_classical, "Error study (classical)"),
            ] {
                if let Some(b) = build {
                    match error_by_basis_size(&problem, &b.basis, &eval_set, &reference, config.k) {
                        Ok(points) => *sweep = points,
                        Err(e) => s.fail(phase, &e),
                    }
                }
            }
        }
        Err(e) => s.fail("Reference solves", &e),
    }
    let last = |sweep: &[maxwell_rb::rb::ErrorPoint], i: usize| sweep.last().map(|p| p.per_mode[i]);
    let errors = (0..config.k)
        .map(|i| ModeError { mode: i + 1, mixed: last(&sweep_mixed, i), classical: last(&sweep_classical, i) })
        .collect();

    let n_red_mixed = mixed.as_ref().map(|b| b.basis.len());
    let mut report = BenchReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        parallel: maxwell_rb::par::is_parallel(),
        repetitions: config.repetitions,
        dofs: DofCounts {
            n: problem.dim(),
            interior_vertices: m0.num_interior_vertices(),
            cotree: problem.cotree_dim(),
            n_red_mixed,
            n_red_classical: classical.as_ref().map(|b| b.basis.len()),
        },
        phases: TABLE_ROWS.iter().map(|l| s.row(l)).collect(),
        extra_phases: [REDUCED_EVALUATION, BUILD_MIXED, BUILD_CLASSICAL].iter().map(|l| s.row(l)).collect(),
        ratios: Ratios { evp: None, evp_with_evaluation: None, tracking: None, construction: None },
        storage: StorageCounters {
            mixed_peak: mixed.as_ref().map(|b| b.peak_storage),
            classical_peak: classical.as_ref().map(|b| b.peak_storage),
            cotree_squared: problem.cotree_dim().pow(2),
            mixed_bound: n_red_mixed.map(|n| 10 * problem.dim() * n),
        },
        errors,
        sweep_mixed,
        sweep_classical,
        greedy_mixed: mixed.map(|b| b.log),
        greedy_classical: classical.map(|b| b.log),
        solver,
        failures: s.failures,
    };
    report.compute_ratios();
    report.validate().map_err(|e| CliError::Io(std::io::Error::other(format!("invalid report: {e}"))))?;
    Ok(report)
}

/// Runs [`bench`] and writes `bench.json` and `bench.txt`.
pub fn bench_command(config: &RunConfig) -> CliResult<String> {
    let report = bench(config)?;
    let table = report.table();
    let mut files = Artifacts::new();
    files.add("bench.json", report.to_json() + "\n");
    files.add("bench.txt", table.clone());
    let mut out = table;
    out.push_str(&commit(files, config)?);
    Ok(out)
}
