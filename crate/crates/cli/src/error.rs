use std::path::{Path, PathBuf};

pub const EXIT_OK: u8 = 0;
/// Bad flags; reported by the argument parser.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_CONVERGENCE: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid arguments, configs, corpora or models.
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::Convergence(_) => EXIT_CONVERGENCE,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Core error raised while working on `path`.
    pub fn core(path: &Path, e: feedmon_core::Error) -> Self {
        use feedmon_core::Error as E;
        match e {
            E::Io(source) => CliError::io(path, source),
            E::TrainingDiverged { .. } => CliError::Convergence(e.to_string()),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        }
    }
}

impl From<feedmon_core::Error> for CliError {
    fn from(e: feedmon_core::Error) -> Self {
        use feedmon_core::Error as E;
        match e {
            E::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            E::TrainingDiverged { .. } => CliError::Convergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<feedmon_server::ConfigError> for CliError {
    fn from(e: feedmon_server::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
