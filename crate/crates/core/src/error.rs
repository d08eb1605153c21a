use std::path::PathBuf;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("MPJVE needs at least two frames, got {0}")]
    TooShortForVelocity(usize),

    #[error("point {index} is at or behind the camera plane (z = {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("degenerate joint configuration: {0}")]
    Rank(&'static str),

    #[error("solver did not converge after {iterations} iterations (best rms {best_rms_px:.4} px)")]
    NonConvergence {
        iterations: usize,
        best_offset: [f64; 3],
        best_rms_px: f64,
    },

    #[error("container format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
