//! Command-line front end: loads a circuit, an ensemble and a table of
//! instances, runs the explanation searches, and writes reports.

pub mod commands;
pub mod convert;
pub mod error;
pub mod input;
pub mod validate;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use suffx_core::search::LogicalMode;
use suffx_core::guarantees::DEFAULT_SAMPLES;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "suffx", version, about = "Probabilistic sufficient explanations for tree ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum CommandKind {
    Explain,
    Sweep,
    Tradeoff,
    Logical,
    Validate,
    Sample,
    Convert,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Beam search per instance; one row per explanation size plus the MLSE.
    Explain(RunArgs),
    /// SDP estimates and both lower bounds per size, averaged over instances.
    Sweep(RunArgs),
    /// sigmoid(EP) against log Pr(z) for every size, split by class.
    Tradeoff(RunArgs),
    /// Minimum logical explanations against the smallest MLSE with SDP >= 0.95.
    Logical(RunArgs),
    /// Checks the fast inference paths against brute-force enumeration.
    Validate(RunArgs),
    /// Draws samples from the circuit.
    Sample(RunArgs),
    /// Converts a boosted-tree text dump into the ensemble format.
    Convert(RunArgs),
}

impl Command {
    pub fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Command::Explain(a) => (CommandKind::Explain, a),
            Command::Sweep(a) => (CommandKind::Sweep, a),
            Command::Tradeoff(a) => (CommandKind::Tradeoff, a),
            Command::Logical(a) => (CommandKind::Logical, a),
            Command::Validate(a) => (CommandKind::Validate, a),
            Command::Sample(a) => (CommandKind::Sample, a),
            Command::Convert(a) => (CommandKind::Convert, a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// One JSON object per instance (or a CSV table for plot data).
    #[default]
    Json,
    /// Aligned text.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Worst,
    Dist,
}

/// Deliberate faults for checking that `validate` catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mutation {
    /// Scale one sum-node weight without renormalizing.
    Weight,
    /// Pair every path probability with the next leaf's weight.
    Leaf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Largest explanation size (default: min(4, n)).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also report the smallest explanation whose class-normalized EP reaches this value.
    #[arg(long)]
    pub ep_min: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Include per-level wall times (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
    /// Report sweep bounds unclamped instead of clamped to [0, 1].
    #[arg(long)]
    pub raw_bounds: bool,
    /// Random evidence sets per validation check.
    #[arg(long, default_value_t = 20)]
    pub checks: usize,
    #[arg(long, value_enum, hide = true)]
    pub inject: Option<Mutation>,
    /// Sampling evidence as `feature=value` pairs (names or indices).
    #[arg(long)]
    pub given: Option<String>,
    /// Feature count for `convert` when no instance header is given.
    #[arg(long)]
    pub features: Option<usize>,
    /// Base log-odds for `convert`.
    #[arg(long, default_value_t = 0.0)]
    pub base_score: f64,
}

/// Validated settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub circuit_path: Option<PathBuf>,
    pub ensemble_path: Option<PathBuf>,
    pub instances_path: Option<PathBuf>,
    pub k: Option<usize>,
    pub beam_width: usize,
    pub samples: usize,
    pub seed: u64,
    pub threads: usize,
    pub output_path: Option<PathBuf>,
    pub ep_min: Option<f64>,
    pub modes: Vec<LogicalMode>,
    pub format: Format,
    pub timing: bool,
    pub raw_bounds: bool,
    pub checks: usize,
    pub inject: Option<Mutation>,
    pub given: Option<String>,
    pub features: Option<usize>,
    pub base_score: f64,
}

impl RunConfig {
    pub fn from_args(a: RunArgs) -> CliResult<Self> {
        let threads = a.threads.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        });
        if a.k == Some(0) {
            return Err(CliError::Usage("--k must be at least 1".into()));
        }
        if a.beam == 0 || a.samples == 0 || threads == 0 {
            return Err(CliError::Usage("--beam, --samples and --threads must be at least 1".into()));
        }
        if a.ep_min.is_some_and(|v| !v.is_finite()) || !a.base_score.is_finite() {
            return Err(CliError::Usage("numeric options must be finite".into()));
        }
        let modes = match a.mode {
            None => vec![LogicalMode::WorstCase, LogicalMode::DistributionAware],
            Some(ModeArg::Worst) => vec![LogicalMode::WorstCase],
            Some(ModeArg::Dist) => vec![LogicalMode::DistributionAware],
        };
        Ok(Self {
            circuit_path: a.circuit,
            ensemble_path: a.ensemble,
            instances_path: a.instances,
            k: a.k,
            beam_width: a.beam,
            samples: a.samples,
            seed: a.seed,
            threads,
            output_path: a.out,
            ep_min: a.ep_min,
            modes,
            format: a.format,
            timing: a.timing,
            raw_bounds: a.raw_bounds,
            checks: a.checks,
            inject: a.inject,
            given: a.given,
            features: a.features,
            base_score: a.base_score,
        })
    }

    /// Defaults for programmatic use.
    pub fn new(circuit: PathBuf, ensemble: PathBuf, instances: PathBuf) -> Self {
        let mut c = Self::from_args(RunArgs {
            beam: 3,
            samples: DEFAULT_SAMPLES,
            checks: 20,
            threads: Some(1),
            ..RunArgs::default()
        })
        .expect("defaults are valid");
        c.circuit_path = Some(circuit);
        c.ensemble_path = Some(ensemble);
        c.instances_path = Some(instances);
        c
    }

    pub(crate) fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
    }
}

/// Runs one command and returns its report text.
pub fn execute(kind: CommandKind, cfg: &RunConfig) -> CliResult<String> {
    match kind {
        CommandKind::Explain => commands::cmd_explain(cfg),
        CommandKind::Sweep => commands::cmd_sweep(cfg),
        CommandKind::Tradeoff => commands::cmd_tradeoff(cfg),
        CommandKind::Logical => commands::cmd_logical(cfg),
        CommandKind::Sample => commands::cmd_sample(cfg),
        CommandKind::Convert => convert::cmd_convert(cfg),
        CommandKind::Validate => {
            let report = validate::cmd_validate(cfg)?;
            if report.passed() {
                Ok(report.render())
            } else {
                // the summary still goes out before the failure status
                emit(cfg, &report.render())?;
                Err(CliError::Validation(report.failures().join(", ")))
            }
        }
    }
}

/// Writes `text` to `--out` or standard output.
pub fn emit(cfg: &RunConfig, text: &str) -> CliResult<()> {
    match &cfg.output_path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, args) = cli.command.split();
    let result = RunConfig::from_args(args).and_then(|cfg| {
        let text = execute(kind, &cfg)?;
        emit(&cfg, &text)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("suffx: {e}");
            e.exit_code()
        }
    }
}
