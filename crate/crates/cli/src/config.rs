//! Pipeline configuration: one TOML file, command-line overrides on top.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparsepose_core::synth::dataset::{DatasetConfig, SplitTag};
use sparsepose_models::diffusion::DenoiserConfig;
use sparsepose_models::guidance::GuidanceStrategy;
use sparsepose_models::imputer::{ImputerConfig, UncertaintyKind};
use sparsepose_models::tokenizer::TokenizerConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    HeadOnly,
    DoublySparse,
    DenseHands,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::HeadOnly => "head_only",
            Mode::DoublySparse => "doubly_sparse",
            Mode::DenseHands => "dense_hands",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "head_only" => Ok(Mode::HeadOnly),
            "doubly_sparse" => Ok(Mode::DoublySparse),
            "dense_hands" => Ok(Mode::DenseHands),
            other => Err(CliError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub mode: Mode,
    pub strategy: GuidanceStrategy,
    pub uncertainty: UncertaintyKind,
    pub n_samples: usize,
    /// Window stride; 1 averages overlapping windows, larger strides tile.
    pub stride: usize,
    /// Reverse-chain steps; must divide the training steps. Absent means all of them.
    pub steps: Option<usize>,
    pub invert_dropout: bool,
    pub split: SplitTag,
    /// Evaluate only the first sequences of the split.
    pub max_sequences: Option<usize>,
    /// Conditions per sampler batch.
    pub batch_size: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::DoublySparse,
            strategy: GuidanceStrategy::Sample,
            uncertainty: UncertaintyKind::Aleatoric,
            n_samples: 1,
            stride: 20,
            steps: None,
            invert_dropout: false,
            split: SplitTag::Test,
            max_sequences: None,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// Guidance strategies evaluated in doubly sparse mode.
    pub strategies: Vec<GuidanceStrategy>,
    pub include_dense_hands: bool,
    pub include_interpolation: bool,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            strategies: vec![GuidanceStrategy::None, GuidanceStrategy::Sample],
            include_dense_hands: true,
            include_interpolation: true,
            bootstrap_resamples: 1000,
            confidence: 0.95,
        }
    }
}

/// Everything a run depends on. Component `seed` fields are overwritten from
/// the master `seed`; dataset seeds are independent of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    pub imputer: ImputerConfig,
    pub tokenizer: TokenizerConfig,
    pub diffusion: DenoiserConfig,
    /// Head-only denoiser; its strategy is always absent.
    pub head_only: DenoiserConfig,
    pub inference: InferenceConfig,
    pub evaluate: EvaluateConfig,
    pub plot: PlotConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    /// Index into the inference split.
    pub sequence: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DatasetConfig::default(),
            imputer: ImputerConfig::default(),
            tokenizer: TokenizerConfig::default(),
            diffusion: DenoiserConfig::default(),
            head_only: DenoiserConfig::default(),
            inference: InferenceConfig::default(),
            evaluate: EvaluateConfig::default(),
            plot: PlotConfig::default(),
        };
        cfg.finalize();
        cfg
    }
}

/// Component seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub imputer: u64,
    pub tokenizer: u64,
    pub diffusion: u64,
    pub head_only: u64,
    pub inference: u64,
    pub bootstrap: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let m = master.wrapping_mul(1000);
        Self {
            master,
            imputer: m,
            tokenizer: m + 1,
            diffusion: m + 2,
            head_only: m + 3,
            inference: m + 4,
            bootstrap: m + 5,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config, or the config recorded in a run manifest (JSON).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let inner = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(inner)?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.finalize();
        Ok(cfg)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    /// Applies derived seeds and fixed cross-component settings.
    pub fn finalize(&mut self) {
        let s = self.seeds();
        self.imputer.seed = s.imputer;
        self.tokenizer.seed = s.tokenizer;
        self.diffusion.seed = s.diffusion;
        self.head_only.seed = s.head_only;
        self.head_only.strategy = None;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.imputer.validate()?;
        let w = self.tokenizer.window;
        if self.imputer.window != w {
            return Err(CliError::Config(format!(
                "imputer window {} differs from the tokenizer window {w}",
                self.imputer.window
            )));
        }
        if self.data.generator.frames < w {
            return Err(CliError::Config("sequences are shorter than the model window".into()));
        }
        let inf = &self.inference;
        if inf.n_samples == 0 || inf.stride == 0 || inf.batch_size == 0 {
            return Err(CliError::Config("n_samples, stride and batch_size must be positive".into()));
        }
        if let Some(steps) = inf.steps {
            for (name, d) in [("diffusion", &self.diffusion), ("head_only", &self.head_only)] {
                if steps == 0 || steps > d.steps || d.steps % steps != 0 {
                    return Err(CliError::Config(format!(
                        "{steps} inference steps do not divide the {} {name} training steps",
                        d.steps
                    )));
                }
            }
        }
        if self.diffusion.strategy.is_none() {
            return Err(CliError::Config("the guided denoiser needs a training strategy".into()));
        }
        if !(0.0 < self.evaluate.confidence && self.evaluate.confidence < 1.0) || self.evaluate.bootstrap_resamples == 0 {
            return Err(CliError::Config("confidence must lie in (0, 1) with at least one resample".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&canonical(serde_json::to_value(self).expect("config serializes"))).expect("json");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Recursively sorts object keys so equal configs hash equally.
pub fn canonical(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            serde_json::Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub strategy: Option<GuidanceStrategy>,
    pub uncertainty: Option<UncertaintyKind>,
    pub n_samples: Option<usize>,
    pub stride: Option<usize>,
    pub steps: Option<usize>,
    pub invert_dropout: bool,
    pub sequence: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let inf = &mut cfg.inference;
        if let Some(m) = self.mode {
            inf.mode = m;
        }
        if let Some(s) = self.strategy {
            inf.strategy = s;
        }
        if let Some(u) = self.uncertainty {
            inf.uncertainty = u;
        }
        if let Some(n) = self.n_samples {
            inf.n_samples = n;
        }
        if let Some(s) = self.stride {
            inf.stride = s;
        }
        if let Some(s) = self.steps {
            inf.steps = Some(s);
        }
        if self.invert_dropout {
            inf.invert_dropout = true;
        }
        if let Some(i) = self.sequence {
            cfg.plot.sequence = i;
        }
        cfg.finalize();
    }
}
