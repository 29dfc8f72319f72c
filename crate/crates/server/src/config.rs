use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use feedmon_core::fsm::RuntimeConfig;
use feedmon_core::signal::Task;
use serde::{Deserialize, Serialize};

/// Server settings, read from TOML. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Sessions that may exist at once before `DELETE` closes them.
    pub max_live_sessions: usize,
    /// Wall-clock length of one tick. Zero runs sessions as fast as possible.
    pub tick_ms: u64,
    pub records_dir: PathBuf,
    /// FSM definition; the built-in table when absent.
    pub fsm: Option<PathBuf>,
    /// Simulator config; the built-in one when absent.
    pub simulator: Option<PathBuf>,
    pub runtime: RuntimeConfig,
    /// Detector model file per task. Tasks without one run unmonitored.
    pub models: BTreeMap<Task, PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_live_sessions: 1,
            tick_ms: 100,
            records_dir: "records".into(),
            fsm: None,
            simulator: None,
            runtime: RuntimeConfig::default(),
            models: BTreeMap::new(),
        }
    }
}

/// Config problem, with the 1-based line when it can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.path.display(), line, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Deserializes TOML, mapping errors to `path:line: message`.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            message: e.to_string(),
        })?;
        let mut cfg: ServerConfig = parse_toml(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.records_dir);
        self.fsm.as_mut().map(fix);
        self.simulator.as_mut().map(fix);
        self.models.values_mut().for_each(fix);
    }
}
