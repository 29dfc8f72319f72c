//! `feedmon` command-line tool.

pub mod commands;
pub mod error;
pub mod manifest;
mod serve;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use feedmon_core::detector::{DetectorConfig, Method};
use feedmon_core::fsm::RuntimeConfig;
use feedmon_core::signal::{SimConfig, Task};
use feedmon_server::config::parse_toml;
use serde::{Deserialize, Serialize};

pub use crate::error::{CliError, EXIT_CONVERGENCE, EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
use crate::error::{read, write};
use crate::manifest::{EvaluateArgs, Invocation, Manifest, RunArgs, SimulateArgs, TrainArgs};

const EXIT_CODES: &str = "\
Exit codes:
  0  success (convergence warnings are printed but still exit 0)
  2  invalid command-line usage
  3  validation error: bad argument, config, corpus, model or manifest
  4  I/O error
  5  training diverged, or a convergence warning under --strict";

#[derive(Debug, Parser)]
#[command(name = "feedmon", version, about = "Execution monitoring for assistive scooping and feeding", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled corpus of simulated executions.
    Simulate(SimulateCmd),
    /// Train a detector on a corpus.
    Train(TrainCmd),
    /// Cross-validated ROC of a detection method over a parameter sweep.
    Evaluate(EvaluateCmd),
    /// Run scripted simulated sessions through the task executor.
    Run(RunCmd),
    /// Serve the session API.
    Serve(ServeCmd),
    /// Redo the command recorded in a manifest and compare output digests.
    Reproduce(ReproduceCmd),
}

/// Options shared by commands that read a tool config file.
#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML file with [detector], [evaluate], [simulator] and [runtime]
    /// sections; flags override it.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[arg(long)]
    pub task: Task,
    /// Defaults: 72 for scooping, 53 for feeding.
    #[arg(long)]
    pub n_nominal: Option<usize>,
    /// Defaults: 86 for scooping, 39 for feeding.
    #[arg(long)]
    pub n_anomalous: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "hmm-svm")]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Exit with code 5 on convergence warnings.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "hmm-svm")]
    pub method: Method,
    /// Default 4.
    #[arg(long)]
    pub k_folds: Option<usize>,
    /// Comma-separated sweep values: class weights for hmm-svm, threshold
    /// multipliers for the baselines. Default depends on the method.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub strict: bool,
    /// ROC table (CSV); a `.summary.json` is written next to it.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value_t = 20)]
    pub sessions: usize,
    /// Sessions that get a simulated fault, spread evenly.
    #[arg(long, default_value_t = 0)]
    pub anomalous: usize,
    /// Detector model for the task; sessions run unmonitored without one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output directory for records.jsonl, summary.json and the manifest.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    /// Server TOML config.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub tick_ms: Option<u64>,
    #[arg(long)]
    pub max_live_sessions: Option<usize>,
    #[arg(long)]
    pub records_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceCmd {
    pub manifest: PathBuf,
    /// Where to write the reproduced outputs; a temporary directory if absent.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub k_folds: Option<usize>,
    pub sweep: Option<Vec<f64>>,
}

/// The `--config` file of simulate, train, evaluate and run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub detector: DetectorConfig,
    pub evaluate: EvaluateSection,
    /// Simulator config inline; the built-in one when absent.
    pub simulator: Option<SimConfig>,
    pub runtime: RuntimeConfig,
}

impl ToolConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let cfg: ToolConfig = parse_toml(&read(path)?, path)?;
        cfg.detector
            .validate()
            .map_err(|e| CliError::Validation(format!("{}: [detector]: {e}", path.display())))?;
        Ok(cfg)
    }

    fn simulator(&self) -> SimConfig {
        self.simulator.clone().unwrap_or_else(SimConfig::builtin)
    }
}

/// Absolute form of a path, so manifests work from any directory.
fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

/// Turns parsed flags into a fully resolved invocation.
pub fn resolve(command: &Command) -> Result<Option<Invocation>, CliError> {
    Ok(Some(match command {
        Command::Simulate(c) => {
            let cfg = ToolConfig::load(c.config.config.as_deref())?;
            let (nom, anom) = match c.task {
                Task::Scooping => (72, 86),
                Task::Feeding => (53, 39),
            };
            Invocation::Simulate(SimulateArgs {
                task: c.task,
                n_nominal: c.n_nominal.unwrap_or(nom),
                n_anomalous: c.n_anomalous.unwrap_or(anom),
                seed: c.seed,
                simulator: cfg.simulator(),
                out: absolute(&c.out)?,
            })
        }
        Command::Train(c) => {
            let cfg = ToolConfig::load(c.config.config.as_deref())?;
            Invocation::Train(TrainArgs {
                corpus: absolute(&c.corpus)?,
                method: c.method,
                seed: c.seed,
                detector: cfg.detector,
                out: absolute(&c.out)?,
            })
        }
        Command::Evaluate(c) => {
            let cfg = ToolConfig::load(c.config.config.as_deref())?;
            Invocation::Evaluate(EvaluateArgs {
                corpus: absolute(&c.corpus)?,
                method: c.method,
                k_folds: c.k_folds.or(cfg.evaluate.k_folds).unwrap_or(4),
                sweep: c
                    .sweep
                    .clone()
                    .or(cfg.evaluate.sweep)
                    .unwrap_or_else(|| c.method.default_sweep()),
                seed: c.seed,
                detector: cfg.detector,
                out: absolute(&c.out)?,
            })
        }
        Command::Run(c) => {
            let cfg = ToolConfig::load(c.config.config.as_deref())?;
            Invocation::Run(RunArgs {
                task: c.task,
                sessions: c.sessions,
                anomalous: c.anomalous,
                seed: c.seed,
                model: c.model.as_deref().map(absolute).transpose()?,
                simulator: cfg.simulator(),
                runtime: cfg.runtime,
                out: absolute(&c.out)?,
            })
        }
        Command::Serve(_) | Command::Reproduce(_) => return Ok(None),
    }))
}

fn strict(command: &Command) -> bool {
    match command {
        Command::Train(c) => c.strict,
        Command::Evaluate(c) => c.strict,
        _ => false,
    }
}

/// Runs a command, printing its report; returns the process exit code.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Serve(c) => return serve::serve(c).map(|()| EXIT_OK),
        Command::Reproduce(c) => return reproduce(c).map(|()| EXIT_OK),
        _ => {}
    }
    let inv = resolve(&cli.command)?.expect("batch command");
    let done = commands::execute(&inv)?;
    let manifest = Manifest::new(inv.clone(), &done.outputs)?;
    let manifest_path = inv.manifest_path();
    write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    for line in &done.report {
        println!("{line}");
    }
    println!("manifest: {}", manifest_path.display());
    for w in &done.warnings {
        eprintln!("warning: {w}");
    }
    if strict(&cli.command) && !done.warnings.is_empty() {
        return Err(CliError::Convergence(format!("{} convergence warnings under --strict", done.warnings.len())));
    }
    Ok(EXIT_OK)
}

fn reproduce(c: &ReproduceCmd) -> Result<(), CliError> {
    let m = Manifest::load(&c.manifest)?;
    for input in &m.inputs {
        let now = manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::Validation(format!(
                "input {} changed since the manifest was written",
                input.path.display()
            )));
        }
    }
    let tmp;
    let dir = match &c.out_dir {
        Some(d) => absolute(d)?,
        None => {
            tmp = tempfile::tempdir().map_err(|e| CliError::io(Path::new("<tempdir>"), e))?;
            tmp.path().to_path_buf()
        }
    };
    let inv = m.invocation.redirected(&dir);
    let done = commands::execute(&inv)?;
    if done.outputs.len() != m.outputs.len() {
        return Err(CliError::Validation("reproduced run produced a different set of outputs".into()));
    }
    let mut mismatches = 0;
    for (new, old) in done.outputs.iter().zip(&m.outputs) {
        let digest = manifest::sha256_file(new)?;
        let same = digest == old.sha256;
        mismatches += usize::from(!same);
        println!(
            "{} {} ({})",
            if same { "identical" } else { "DIFFERENT" },
            old.path.display(),
            &digest[..16]
        );
    }
    if mismatches > 0 {
        return Err(CliError::Validation(format!("{mismatches} outputs differ from the manifest")));
    }
    Ok(())
}
