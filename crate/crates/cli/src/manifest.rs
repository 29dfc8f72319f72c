//! Run manifests: the resolved invocation plus digests of every input and
//! output file, written next to the outputs.

use std::path::{Path, PathBuf};

use feedmon_core::detector::{DetectorConfig, Method};
use feedmon_core::fsm::RuntimeConfig;
use feedmon_core::signal::{SimConfig, Task};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read, CliError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub task: Task,
    pub n_nominal: usize,
    pub n_anomalous: usize,
    pub seed: u64,
    pub simulator: SimConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub detector: DetectorConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateArgs {
    pub corpus: PathBuf,
    pub method: Method,
    pub k_folds: usize,
    pub sweep: Vec<f64>,
    pub seed: u64,
    pub detector: DetectorConfig,
    /// ROC table; the summary goes next to it.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArgs {
    pub task: Task,
    pub sessions: usize,
    pub anomalous: usize,
    pub seed: u64,
    pub model: Option<PathBuf>,
    pub simulator: SimConfig,
    pub runtime: RuntimeConfig,
    /// Directory receiving the record store and run summary.
    pub out: PathBuf,
}

/// A fully resolved command: everything needed to redo it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Simulate(SimulateArgs),
    Train(TrainArgs),
    Evaluate(EvaluateArgs),
    Run(RunArgs),
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate(_) => "simulate",
            Invocation::Train(_) => "train",
            Invocation::Evaluate(_) => "evaluate",
            Invocation::Run(_) => "run",
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Simulate(_) => Vec::new(),
            Invocation::Train(a) => vec![a.corpus.clone()],
            Invocation::Evaluate(a) => vec![a.corpus.clone()],
            Invocation::Run(a) => a.model.iter().cloned().collect(),
        }
    }

    fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Invocation::Simulate(a) => &mut a.out,
            Invocation::Train(a) => &mut a.out,
            Invocation::Evaluate(a) => &mut a.out,
            Invocation::Run(a) => &mut a.out,
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Invocation::Simulate(a) => &a.out,
            Invocation::Train(a) => &a.out,
            Invocation::Evaluate(a) => &a.out,
            Invocation::Run(a) => &a.out,
        }
    }

    /// Same invocation writing into `dir`.
    pub fn redirected(&self, dir: &Path) -> Self {
        let mut inv = self.clone();
        let name = inv.out().file_name().map(PathBuf::from).unwrap_or_else(|| "out".into());
        *inv.out_mut() = dir.join(name);
        inv
    }

    /// Where the manifest goes: inside an output directory, else next to
    /// the output file.
    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Invocation::Run(a) => a.out.join("manifest.json"),
            other => {
                let mut s = other.out().as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl Manifest {
    pub fn new(invocation: Invocation, outputs: &[PathBuf]) -> Result<Self, CliError> {
        Ok(Self {
            format_version: MANIFEST_VERSION,
            tool: "feedmon".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: digests(&invocation.inputs())?,
            outputs: digests(outputs)?,
            invocation,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let m: Manifest = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Validation(format!("{}: not a manifest: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(CliError::Validation(format!(
                "{}: manifest version {} is not supported",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}
