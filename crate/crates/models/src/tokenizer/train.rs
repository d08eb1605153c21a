use std::sync::Arc;

use candle_core::Tensor;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sparsepose_core::synth::dataset::DatasetSplit;
use sparsepose_core::MotionSequence;

use super::loss::{straight_through, vqvae_loss, VqLossParts, VqLossWeights};
use super::model::{motion_features, VqArch, VqVae};
use super::quantize::{dead_fraction, Codebook, EmaConfig};
use crate::error::{Error, Result};
use crate::nn::{device, OptimConfig, Trainer};
use crate::normalize::Normalizer;
use crate::windows::{head_anchors, window_starts};

const SHUFFLE_STREAM: u64 = 0x70C3_7A11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub window: usize,
    pub window_stride: usize,
    pub arch: VqArch,
    pub loss: VqLossWeights,
    pub ema: EmaConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            window: 40,
            window_stride: 5,
            arch: VqArch::default(),
            loss: VqLossWeights::default(),
            ema: EmaConfig::default(),
            epochs: 20,
            batch_size: 32,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

/// Motion windows paired with their tracked head anchors.
pub fn motion_windows(split: &DatasetSplit, window: usize, stride: usize) -> Result<Vec<(MotionSequence, Vec<[f64; 2]>)>> {
    let mut out = Vec::new();
    for s in &split.samples {
        for start in window_starts(s.motion.len(), window, stride)? {
            out.push((s.motion.window(start, window)?, head_anchors(&s.signal, start, window)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerReport {
    /// Mean total loss per epoch.
    pub history: Vec<f64>,
    /// Mean components over the final epoch.
    pub final_parts: VqLossParts,
    /// Codes unused over the final epoch.
    pub dead_fraction: f64,
}

pub fn train_tokenizer(split: &DatasetSplit, cfg: &TokenizerConfig) -> Result<(VqVae, TokenizerReport)> {
    if split.samples.is_empty() {
        return Err(Error::Config("cannot train the tokenizer on an empty split".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.window < 3 {
        return Err(Error::Config("tokenizer needs batch_size, epochs > 0 and window ≥ 3".into()));
    }
    let windows = motion_windows(split, cfg.window, cfg.window_stride)?;
    let skeleton: Arc<_> = windows[0].0.skeleton.clone();
    let fps = windows[0].0.fps;
    let mut feats = Vec::new();
    for (m, a) in &windows {
        feats.extend(motion_features(m, a)?);
    }
    let width = super::model::feature_width(skeleton.joint_count());
    let normalizer = Normalizer::fit_pooled(&feats, width)?;
    let mut vq = VqVae::new(&cfg.arch, cfg.window, fps, skeleton, normalizer, cfg.seed)?;
    let refs: Vec<(&MotionSequence, &[[f64; 2]])> = windows.iter().map(|(m, a)| (m, a.as_slice())).collect();
    let all = vq.feature_tensor(&refs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut trainer = Trainer::new(vq.store.vars(), cfg.optim)?;
    let mut order: Vec<u32> = (0..windows.len() as u32).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut final_parts = VqLossParts::default();
    let mut used = Vec::new();
    let mut initialized = false;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = VqLossParts::default();
        let mut batches = 0usize;
        used.clear();
        for idx in order.chunks(cfg.batch_size) {
            let x = all.index_select(&Tensor::new(idx, &device())?, 0)?;
            let z = vq.encode_tensor(&x)?;
            let rows = VqVae::latent_rows(&z)?;
            if !initialized {
                vq.codebook = Codebook::from_samples(cfg.arch.codebook_size, cfg.arch.code_dim, &rows, &mut rng)?;
                initialized = true;
            }
            let tokens = vq.codebook.quantize(&rows)?;
            let per_window: Vec<Vec<usize>> = tokens.chunks(cfg.window).map(<[usize]>::to_vec).collect();
            let z_q = vq.prototypes(&per_window)?;
            let z_st = straight_through(&z, &z_q)?;
            let x_hat = vq.decode_tensor(&z_st)?;
            let (loss, parts) = vqvae_loss(&x, &x_hat, &z, &z_q, &cfg.loss)?;
            trainer.step(&loss)?;
            vq.codebook.ema_update(&rows, &tokens, &cfg.ema, &mut rng)?;
            used.extend(tokens);
            accumulate(&mut sum, &parts);
            batches += 1;
        }
        let mean = scale(&sum, 1.0 / batches as f64);
        info!(
            "tokenizer epoch {epoch}: total {:.4} rec {:.4} vel {:.4} acc {:.4} commit {:.4}",
            mean.total, mean.reconstruction, mean.velocity, mean.acceleration, mean.commitment
        );
        history.push(mean.total);
        final_parts = mean;
    }
    let report = TokenizerReport {
        history,
        final_parts,
        dead_fraction: dead_fraction(&used, cfg.arch.codebook_size),
    };
    Ok((vq, report))
}

fn accumulate(acc: &mut VqLossParts, p: &VqLossParts) {
    acc.reconstruction += p.reconstruction;
    acc.codebook += p.codebook;
    acc.commitment += p.commitment;
    acc.velocity += p.velocity;
    acc.acceleration += p.acceleration;
    acc.total += p.total;
}

fn scale(p: &VqLossParts, s: f64) -> VqLossParts {
    VqLossParts {
        reconstruction: p.reconstruction * s,
        codebook: p.codebook * s,
        commitment: p.commitment * s,
        velocity: p.velocity * s,
        acceleration: p.acceleration * s,
        total: p.total * s,
    }
}
