use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use maxwell_rb::rb::GaugeMode;
use maxwell_rb_cli::commands;
use maxwell_rb_cli::config::RunConfig;
use maxwell_rb_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "maxwell-rb", version, about = "Reduced-basis Maxwell cavity eigenvalues with tree-cotree gauging")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    gauge: Option<Gauge>,
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gauge {
    Classical,
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the K lowest physical modes at one parameter.
    Solve {
        #[arg(long = "t", value_name = "FLOAT", allow_negative_numbers = true)]
        t: f64,
        /// Write A, B, the eigenvectors and a JSON record to the output directory.
        #[arg(long)]
        export: bool,
    },
    /// Snapshots, POD and greedy enrichment; writes the basis and its logs.
    BuildBasis,
    /// Track the K lowest modes over [0, 1].
    Track {
        #[arg(long, conflicts_with = "full", required_unless_present = "full")]
        reduced: bool,
        #[arg(long)]
        full: bool,
    },
    /// Timed comparison of both gauges, both tracking paths and the error study.
    Bench,
    /// Write A(t), B(t), the discrete gradient and the tree-cotree split.
    ExportMatrices {
        #[arg(long = "t", value_name = "FLOAT", default_value_t = 0.0, allow_negative_numbers = true)]
        t: f64,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(g) = cli.gauge {
        config.gauge = match g {
            Gauge::Classical => GaugeMode::Classical,
            Gauge::Mixed => GaugeMode::Mixed,
        };
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = cli.output {
        config.output = dir;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        if !maxwell_rb::par::init_threads(threads) {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    match cli.command {
        Command::Solve { t, export } => commands::solve(&config, t, export),
        Command::BuildBasis => commands::build(&config),
        Command::Track { reduced, .. } => commands::track(&config, reduced),
        Command::Bench => commands::bench_command(&config),
        Command::ExportMatrices { t } => commands::export_matrices(&config, t),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAXWELL_RB_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
