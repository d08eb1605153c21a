//! Artifact layout under a run directory.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn imputer(&self) -> PathBuf {
        self.root.join("imputer")
    }

    pub fn tokenizer(&self) -> PathBuf {
        self.root.join("tokenizer")
    }

    pub fn denoiser(&self) -> PathBuf {
        self.root.join("denoiser")
    }

    pub fn head_only_denoiser(&self) -> PathBuf {
        self.root.join("denoiser_head_only")
    }

    pub fn outputs(&self, command: &str) -> PathBuf {
        self.root.join(command)
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.json"))
    }

    /// Fails listing every path that does not exist.
    pub fn require(paths: &[PathBuf]) -> Result<()> {
        let missing: Vec<PathBuf> = paths.iter().filter(|p| !Path::exists(p)).cloned().collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::MissingArtifacts(missing))
        }
    }
}
