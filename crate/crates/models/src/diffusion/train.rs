use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sparsepose_core::synth::dataset::DatasetSplit;
use sparsepose_core::TrackingSignal;

use super::denoiser::{Denoiser, DenoiserArch, HandInput};
use super::kernels::forward_corrupt;
use super::schedule::ScheduleConfig;
use crate::error::{Error, Result};
use crate::guidance::{make_condition, ConditioningVector, GuidanceStrategy};
use crate::imputer::features::{FeatureNormalizer, ImputerInput};
use crate::imputer::{ImputedTrajectory, ImputerEnsemble, UncertaintyKind};
use crate::nn::{OptimConfig, Trainer};
use crate::tokenizer::VqVae;
use crate::windows::{head_anchors, window_starts};

const SHUFFLE_STREAM: u64 = 0xD1F_F051;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub arch: DenoiserArch,
    /// Length of the training chain.
    pub steps: usize,
    pub schedule: ScheduleConfig,
    /// Weight of the clean-token cross-entropy.
    pub lambda: f64,
    pub window_stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Strategy drawing the training conditions; `None` trains a head-only model.
    pub strategy: Option<GuidanceStrategy>,
    pub uncertainty: UncertaintyKind,
    pub invert_dropout: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            arch: DenoiserArch::default(),
            steps: 100,
            schedule: ScheduleConfig::default(),
            lambda: 1e-3,
            window_stride: 10,
            epochs: 20,
            batch_size: 32,
            optim: OptimConfig::default(),
            seed: 0,
            strategy: Some(GuidanceStrategy::Sample),
            uncertainty: UncertaintyKind::Aleatoric,
            invert_dropout: false,
        }
    }
}

impl DenoiserConfig {
    pub fn hand_input(&self) -> HandInput {
        self.strategy.map_or(HandInput::None, HandInput::for_strategy)
    }
}

/// One training window: clean tokens, the head signal and, for hand-conditioned
/// models, the imputed hands.
#[derive(Clone, Debug)]
pub struct DenoiserExample {
    pub tokens: Vec<usize>,
    pub head: TrackingSignal,
    pub hands: Option<ImputedTrajectory>,
}

impl DenoiserExample {
    pub fn condition<R: Rng>(&self, strategy: Option<GuidanceStrategy>, invert_dropout: bool, rng: &mut R) -> Result<ConditioningVector> {
        match (strategy, &self.hands) {
            (None, _) => Ok(ConditioningVector::head_only(&self.head)),
            (Some(s), Some(h)) => make_condition(&self.head, h, s, invert_dropout, rng),
            (Some(_), None) => Err(Error::Config("hand-conditioned training needs imputed hands".into())),
        }
    }
}

/// Cuts `window`-frame examples from a split. Hands come from the imputer when
/// one is given.
pub fn denoiser_examples(
    split: &DatasetSplit,
    vq: &VqVae,
    imputer: Option<&ImputerEnsemble>,
    kind: UncertaintyKind,
    stride: usize,
) -> Result<Vec<DenoiserExample>> {
    let window = vq.frames;
    let mut motions = Vec::new();
    let mut heads = Vec::new();
    let mut inputs = Vec::new();
    for s in &split.samples {
        for start in window_starts(s.motion.len(), window, stride)? {
            motions.push((s.motion.window(start, window)?, head_anchors(&s.signal, start, window)));
            heads.push(s.signal.window(start, window)?);
            if imputer.is_some() {
                inputs.push(ImputerInput::from_sample(s, start, window)?);
            }
        }
    }
    let refs: Vec<_> = motions.iter().map(|(m, a)| (m, a.as_slice())).collect();
    let mut tokens = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(64) {
        tokens.extend(vq.tokenize(chunk)?);
    }
    let hands: Vec<Option<ImputedTrajectory>> = match imputer {
        Some(imp) => imp.impute(&inputs, kind)?.into_iter().map(Some).collect(),
        None => vec![None; heads.len()],
    };
    Ok(tokens
        .into_iter()
        .zip(heads)
        .zip(hands)
        .map(|((tokens, head), hands)| DenoiserExample { tokens, head, hands })
        .collect())
}

pub fn train_denoiser(examples: &[DenoiserExample], codebook_size: usize, cfg: &DenoiserConfig) -> Result<(Denoiser, Vec<f64>)> {
    let first = examples.first().ok_or_else(|| Error::Config("no denoiser training windows".into()))?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("denoiser needs epochs and batch_size > 0".into()));
    }
    if let Some(&bad) = examples.iter().flat_map(|e| &e.tokens).find(|&&z| z >= codebook_size) {
        return Err(Error::Config(format!(
            "token {bad} does not fit a {codebook_size}-entry codebook"
        )));
    }
    let frames = first.tokens.len();
    let signals: Vec<TrackingSignal> = examples.iter().map(|e| e.head.clone()).collect();
    let normalizer = FeatureNormalizer::fit(&signals)?;
    let model = Denoiser::new(
        &cfg.arch,
        frames,
        cfg.steps,
        codebook_size,
        &cfg.schedule,
        first.head.hand_dim,
        cfg.hand_input(),
        normalizer,
        cfg.seed,
    )?;
    let mut trainer = Trainer::new(model.store.vars(), cfg.optim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut vlb, mut ce, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let conds = idx
                .iter()
                .map(|&i| examples[i].condition(cfg.strategy, cfg.invert_dropout, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ConditioningVector> = conds.iter().collect();
            let cond = model.cond_batch(&refs)?;
            let z0: Vec<Vec<usize>> = idx.iter().map(|&i| examples[i].tokens.clone()).collect();
            let t: Vec<usize> = idx.iter().map(|_| rng.random_range(1..=cfg.steps)).collect();
            let z_t = z0
                .iter()
                .zip(&t)
                .map(|(z, &ti)| forward_corrupt(&model.schedule, z, ti, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (loss, v, e) = model.loss(&z0, &z_t, &t, &cond, cfg.lambda)?;
            sum += trainer.step(&loss)?;
            vlb += v;
            ce += e;
            batches += 1;
        }
        let nb = batches as f64;
        info!("denoiser epoch {epoch}: loss {:.4} vlb {:.4} ce {:.4}", sum / nb, vlb / nb, ce / nb);
        history.push(sum / nb);
    }
    Ok((model, history))
}
