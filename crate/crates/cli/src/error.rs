use std::path::PathBuf;

/// Failures grouped by the exit code they map to.
#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Models(sparsepose_models::Error),

    #[error(transparent)]
    Core(sparsepose_core::Error),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sparsepose_models::Error as M;
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifacts(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Models(M::Numeric(_) | M::Candle(_)) => 4,
            CliError::Models(M::Config(_) | M::Schedule(_) | M::Domain(_)) => 2,
            CliError::Models(M::Core(e)) | CliError::Core(e) => core_code(e),
            CliError::Models(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

fn core_code(e: &sparsepose_core::Error) -> i32 {
    match e {
        sparsepose_core::Error::Config(_) => 2,
        sparsepose_core::Error::NonConvergence { .. } | sparsepose_core::Error::DegenerateRotation(_) => 4,
        _ => 1,
    }
}

impl From<sparsepose_models::Error> for CliError {
    fn from(e: sparsepose_models::Error) -> Self {
        CliError::Models(e)
    }
}

impl From<sparsepose_core::Error> for CliError {
    fn from(e: sparsepose_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
