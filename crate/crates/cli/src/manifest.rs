//! Run manifests: what a command read, what it wrote and what it measured.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sparsepose_core::container::{directory_digest, file_digest};

use crate::config::{canonical, PipelineConfig, Seeds};
use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Digests of the artifacts the command consumed, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Digests of the artifacts the command produced.
    pub outputs: BTreeMap<String, String>,
    /// Deterministic measurements; replaying the manifest reproduces them exactly.
    pub metrics: Value,
    /// Wall-clock seconds; not part of `metrics` because they vary between runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.into(),
            config: config.clone(),
            config_hash: config.hash(),
            seeds: config.seeds(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: Value::Null,
            timings: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.into(), digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.insert(role.into(), digest(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let v = canonical(serde_json::to_value(self)?);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string_pretty(&v)? + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CliError::Config(format!("manifest schema {} is not supported", m.schema_version)));
        }
        Ok(m)
    }
}

/// Directory or file digest, whichever `path` is.
pub fn digest(path: &Path) -> Result<String> {
    Ok(if path.is_dir() { directory_digest(path)? } else { file_digest(path)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_config_and_digests() {
        let dir = tempfile::tempdir().unwrap();
        let art = dir.path().join("a.txt");
        fs::write(&art, "abc").unwrap();
        let mut m = RunManifest::new("evaluate", &PipelineConfig::default());
        m.input("data", &art).unwrap();
        m.metrics = serde_json::json!({"mpjpe": 1.5});
        m.timings.insert("total".into(), 0.25);
        let path = dir.path().join("manifest-evaluate.json");
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config_hash, back.config.hash());
        assert_eq!(PipelineConfig::load(&path).unwrap(), m.config);
    }
}
