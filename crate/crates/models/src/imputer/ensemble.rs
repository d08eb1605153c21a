//! Ensemble training, uncertainty estimation, imputation and checkpoints.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sparsepose_core::container::{ArrayReader, ArrayWriter};
use sparsepose_core::hand::detection::DEFAULT_NOISE_SIGMA_M;
use sparsepose_core::synth::dataset::DatasetSplit;
use sparsepose_core::synth::tracking::HandDim;
use sparsepose_core::{TrackingSignal, VisibilityMask};

use super::features::{decanonicalize, FeatureNormalizer, ImputerInput, PreparedWindow, TokenBatch};
use super::loss::beta_nll_tensor;
use super::model::{MaeArch, MaeMember};
use crate::error::{Error, Result};
use crate::nn::{to_f64, OptimConfig, Trainer};
use crate::windows::window_starts;

pub const CHECKPOINT_KIND: &str = "sparsepose.imputer";
const SHUFFLE_STREAM: u64 = 0x5A7E_11E5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputerConfig {
    pub window: usize,
    pub arch: MaeArch,
    pub members: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stride between training windows cut from each sequence.
    pub window_stride: usize,
    pub optim: OptimConfig,
    /// Member `i` is initialized and shuffled from `seed + i`.
    pub seed: u64,
    /// Uncertainty assigned to frames where the detection is trusted.
    pub visible_floor: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            window: 40,
            arch: MaeArch::default(),
            members: 4,
            beta: 0.5,
            epochs: 10,
            batch_size: 32,
            window_stride: 10,
            optim: OptimConfig::default(),
            seed: 0,
            visible_floor: DEFAULT_NOISE_SIGMA_M * DEFAULT_NOISE_SIGMA_M,
        }
    }
}

impl ImputerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("the ensemble needs at least one member".into()));
        }
        if self.window < 2 || self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::Config("window ≥ 2, batch_size and window_stride > 0 required".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("β must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.visible_floor > 0.0) {
            return Err(Error::Config("visible_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Aleatoric,
    Epistemic,
    Total,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [UncertaintyKind::Aleatoric, UncertaintyKind::Epistemic, UncertaintyKind::Total];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Aleatoric => "aleatoric",
            UncertaintyKind::Epistemic => "epistemic",
            UncertaintyKind::Total => "total",
        }
    }
}

impl std::str::FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown uncertainty kind {s:?}")))
    }
}

/// Element-wise ensemble moments.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub total: Vec<f64>,
}

impl EnsembleStats {
    /// Means and variances per member, all of one length. Sums run over
    /// deviations from member 0 so identical members reproduce that member exactly.
    pub fn combine(means: &[Vec<f64>], vars: &[Vec<f64>]) -> Result<Self> {
        let m = means.len();
        if m == 0 || vars.len() != m {
            return Err(Error::Shape("need one variance per member mean, at least one member".into()));
        }
        let n = means[0].len();
        if means.iter().chain(vars).any(|v| v.len() != n) {
            return Err(Error::Shape("member outputs differ in length".into()));
        }
        let mf = m as f64;
        let mut out = Self {
            mean: vec![0.0; n],
            aleatoric: vec![0.0; n],
            epistemic: vec![0.0; n],
            total: vec![0.0; n],
        };
        for i in 0..n {
            let (base, vbase) = (means[0][i], vars[0][i]);
            let (mut s1, mut s2, mut sv) = (0.0, 0.0, 0.0);
            for k in 0..m {
                let d = means[k][i] - base;
                s1 += d;
                s2 += d * d;
                sv += vars[k][i] - vbase;
            }
            let shift = s1 / mf;
            out.mean[i] = base + shift;
            out.aleatoric[i] = vbase + sv / mf;
            out.epistemic[i] = (s2 / mf - shift * shift).max(0.0);
            out.total[i] = out.aleatoric[i] + out.epistemic[i];
        }
        Ok(out)
    }

    pub fn uncertainty(&self, kind: UncertaintyKind) -> &[f64] {
        match kind {
            UncertaintyKind::Aleatoric => &self.aleatoric,
            UncertaintyKind::Epistemic => &self.epistemic,
            UncertaintyKind::Total => &self.total,
        }
    }
}

/// Dense imputed hands for one window, `frames × 2 × width` each.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputedTrajectory {
    pub hand_dim: HandDim,
    pub mean: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub kind: UncertaintyKind,
    pub mask: VisibilityMask,
}

impl ImputedTrajectory {
    pub fn frames(&self) -> usize {
        self.mask.frames()
    }
}

#[derive(Debug)]
pub struct ImputerEnsemble {
    pub config: ImputerConfig,
    pub hand_dim: HandDim,
    pub normalizer: FeatureNormalizer,
    pub members: Vec<MaeMember>,
    /// Mean training loss per epoch, per member.
    pub history: Vec<Vec<f64>>,
}

/// Training windows (inputs with simulated detections, ground-truth targets).
pub fn training_windows(split: &DatasetSplit, window: usize, stride: usize) -> Result<Vec<(ImputerInput, TrackingSignal)>> {
    let mut out = Vec::new();
    for s in &split.samples {
        for start in window_starts(s.signal.frames(), window, stride)? {
            out.push((ImputerInput::from_sample(s, start, window)?, s.signal.window(start, window)?));
        }
    }
    Ok(out)
}

impl ImputerEnsemble {
    /// Untrained members around a given normalizer.
    pub fn init(config: &ImputerConfig, hand_dim: HandDim, normalizer: FeatureNormalizer) -> Result<Self> {
        config.validate()?;
        let w = hand_dim.width();
        let members = (0..config.members)
            .map(|i| MaeMember::new(&config.arch, config.window, w, config.seed + i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            hand_dim,
            normalizer,
            members,
            history: vec![Vec::new(); config.members],
        })
    }

    pub fn train(split: &DatasetSplit, config: &ImputerConfig) -> Result<Self> {
        config.validate()?;
        if split.samples.is_empty() {
            return Err(Error::Config("cannot train the imputer on an empty split".into()));
        }
        let windows = training_windows(split, config.window, config.window_stride)?;
        let targets: Vec<TrackingSignal> = windows.iter().map(|(_, y)| y.clone()).collect();
        let normalizer = FeatureNormalizer::fit(&targets)?;
        let hand_dim = targets[0].hand_dim;
        let prepared = windows
            .iter()
            .map(|(x, y)| PreparedWindow::new(x, Some(&y.hands), &normalizer))
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::init(config, hand_dim, normalizer)?;
        for i in 0..ens.members.len() {
            let history = train_member(&ens.members[i], &prepared, config, config.seed + i as u64)?;
            info!("imputer member {i}: final epoch loss {:.4}", history.last().copied().unwrap_or(f64::NAN));
            ens.history[i] = history;
        }
        Ok(ens)
    }

    pub fn frames(&self) -> usize {
        self.config.window
    }

    /// Per-member means and variances in data units, one entry per input window.
    pub fn member_outputs(&self, inputs: &[ImputerInput]) -> Result<Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
        let w = self.hand_dim.width();
        let t = self.frames();
        for x in inputs {
            if x.frames() != t || x.hand_width() != w {
                return Err(Error::Shape(format!(
                    "imputer input of {} frames and width {}, ensemble expects {t} and {w}",
                    x.frames(),
                    x.hand_width()
                )));
            }
        }
        let prepared = inputs.iter().map(|x| PreparedWindow::new(x, None, &self.normalizer)).collect::<Result<Vec<_>>>()?;
        let per = t * 2 * w;
        let mut out: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = vec![(Vec::new(), Vec::new()); inputs.len()];
        for chunk_start in (0..prepared.len()).step_by(self.config.batch_size.max(1)) {
            let chunk = &prepared[chunk_start..(chunk_start + self.config.batch_size).min(prepared.len())];
            let refs: Vec<&PreparedWindow> = chunk.iter().collect();
            let batch = TokenBatch::from_prepared(&refs, t, w)?;
            for member in &self.members {
                let (mu, var) = member.forward(&batch)?;
                let (mu, var) = (to_f64(&mu)?, to_f64(&var)?);
                for (j, p) in chunk.iter().enumerate() {
                    let mut m = mu[j * per..(j + 1) * per].to_vec();
                    let mut v = var[j * per..(j + 1) * per].to_vec();
                    self.normalizer.hands.invert(&mut m);
                    decanonicalize(&mut m, w, p.origin);
                    self.normalizer.hands.invert_variance(&mut v);
                    let slot = &mut out[chunk_start + j];
                    slot.0.push(m);
                    slot.1.push(v);
                }
            }
        }
        Ok(out)
    }

    /// Ensemble mean and uncertainties for every frame, without the visible override.
    pub fn estimate_uncertainty(&self, inputs: &[ImputerInput]) -> Result<Vec<EnsembleStats>> {
        self.member_outputs(inputs)?
            .iter()
            .map(|(m, v)| EnsembleStats::combine(m, v))
            .collect()
    }

    /// Dense hands: detections on visible frames at the floor uncertainty, the
    /// ensemble estimate elsewhere.
    pub fn impute(&self, inputs: &[ImputerInput], kind: UncertaintyKind) -> Result<Vec<ImputedTrajectory>> {
        let stats = self.estimate_uncertainty(inputs)?;
        Ok(inputs
            .iter()
            .zip(stats)
            .map(|(x, st)| override_visible(x, &st, kind, self.config.visible_floor))
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut w = ArrayWriter::create(dir)?;
        for (i, m) in self.members.iter().enumerate() {
            m.store.write(&mut w, &format!("m{i}."))?;
        }
        let meta = serde_json::json!({
            "config": self.config,
            "hand_dim": self.hand_dim,
            "normalizer": self.normalizer,
            "history": self.history,
        });
        w.finish(CHECKPOINT_KIND, meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let r = ArrayReader::open(dir)?;
        r.expect_kind(CHECKPOINT_KIND)?;
        let meta = r.meta();
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Config(format!("imputer checkpoint lacks {k}")));
        let config: ImputerConfig = serde_json::from_value(field("config")?)?;
        let hand_dim: HandDim = serde_json::from_value(field("hand_dim")?)?;
        let normalizer: FeatureNormalizer = serde_json::from_value(field("normalizer")?)?;
        let mut ens = Self::init(&config, hand_dim, normalizer)?;
        ens.history = serde_json::from_value(field("history")?)?;
        for (i, m) in ens.members.iter().enumerate() {
            m.store.read(&r, &format!("m{i}."))?;
        }
        Ok(ens)
    }
}

/// Applies the trusted-detection rule to one window.
pub fn override_visible(input: &ImputerInput, stats: &EnsembleStats, kind: UncertaintyKind, floor: f64) -> ImputedTrajectory {
    let w = input.hand_width();
    let mut mean = stats.mean.clone();
    let mut unc = stats.uncertainty(kind).to_vec();
    for (t, v) in input.mask.visible.iter().enumerate() {
        for s in 0..2 {
            if v[s] {
                let r = (t * 2 + s) * w..(t * 2 + s + 1) * w;
                mean[r.clone()].copy_from_slice(&input.hands[r.clone()]);
                unc[r].fill(floor);
            }
        }
    }
    ImputedTrajectory {
        hand_dim: input.hand_dim,
        mean,
        uncertainty: unc,
        kind,
        mask: input.mask.clone(),
    }
}

fn train_member(member: &MaeMember, data: &[PreparedWindow], cfg: &ImputerConfig, seed: u64) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(member.store.vars(), cfg.optim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (t, w) = (member.layout.frames, member.layout.hand_width);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&PreparedWindow> = idx.iter().map(|&i| &data[i]).collect();
            let batch = TokenBatch::from_prepared(&refs, t, w)?;
            let target = batch.target.as_ref().ok_or_else(|| Error::Shape("training window without a target".into()))?;
            let (mu, var) = member.forward(&batch)?;
            let loss = beta_nll_tensor(&mu, &var, target, cfg.beta)?;
            total += trainer.step(&loss)?;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        info!("imputer seed {seed} epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_member_arithmetic() {
        let st = EnsembleStats::combine(&[vec![0.0], vec![2.0]], &[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!((st.mean[0], st.epistemic[0], st.aleatoric[0], st.total[0]), (1.0, 1.0, 1.0, 2.0));
    }

    #[test]
    fn identical_members_have_no_epistemic_variance() {
        let mu = vec![0.1, -3.7, 1e6, 1.0 / 3.0];
        let var = vec![0.5, 0.25, 2.0, 1e-6];
        for m in [1, 3, 4, 7] {
            let st = EnsembleStats::combine(&vec![mu.clone(); m], &vec![var.clone(); m]).unwrap();
            assert!(st.epistemic.iter().all(|&e| e == 0.0));
            assert_eq!(st.mean, mu);
            assert_eq!(st.aleatoric, var);
        }
    }

    #[test]
    fn uncertainty_kinds_parse() {
        for k in UncertaintyKind::ALL {
            assert_eq!(k.name().parse::<UncertaintyKind>().unwrap(), k);
        }
        assert!("both".parse::<UncertaintyKind>().is_err());
    }
}
