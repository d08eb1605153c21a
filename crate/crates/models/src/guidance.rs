//! Uncertainty-guided conditioning and multi-sample marginalization.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use nalgebra::{Matrix3, Vector3};
use sparsepose_core::metrics::{samples_of, MotionSamples};
use sparsepose_core::rotation::chordal_mean;
use sparsepose_core::synth::tracking::HEAD_DIM;
use sparsepose_core::{matrix_to_rot6d, MotionSequence, Pose, TrackingSignal};

use crate::diffusion::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::imputer::ImputedTrajectory;
use crate::tokenizer::VqVae;
use crate::windows::head_anchors;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceStrategy {
    /// The imputed mean alone.
    None,
    /// One element-wise Gaussian draw around the mean.
    Sample,
    /// Mean elements zeroed by their normalized uncertainty.
    Dropout,
    /// Mean and uncertainty side by side in the feature dimension.
    DistEmbed,
}

impl GuidanceStrategy {
    pub const ALL: [GuidanceStrategy; 4] = [
        GuidanceStrategy::None,
        GuidanceStrategy::Sample,
        GuidanceStrategy::Dropout,
        GuidanceStrategy::DistEmbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GuidanceStrategy::None => "none",
            GuidanceStrategy::Sample => "sample",
            GuidanceStrategy::Dropout => "dropout",
            GuidanceStrategy::DistEmbed => "dist-embed",
        }
    }

    /// Randomness is redrawn per condition, so multi-sample averaging is meaningful.
    pub fn is_stochastic(self) -> bool {
        matches!(self, GuidanceStrategy::Sample | GuidanceStrategy::Dropout)
    }
}

impl FromStr for GuidanceStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Ok(GuidanceStrategy::None),
            "sample" => Ok(GuidanceStrategy::Sample),
            "dropout" => Ok(GuidanceStrategy::Dropout),
            "dist-embed" => Ok(GuidanceStrategy::DistEmbed),
            other => Err(Error::Config(format!("unknown guidance strategy {other:?}"))),
        }
    }
}

/// Per-frame conditioning features for one window, in data units.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningVector {
    /// `None` for head-only conditions.
    pub strategy: Option<GuidanceStrategy>,
    pub frames: usize,
    /// Hand features per frame, both sides; 0 for head-only.
    pub hand_width: usize,
    /// `frames × HEAD_DIM`.
    pub head: Vec<f64>,
    /// `frames × hand_width` guided hand features.
    pub hands: Vec<f64>,
    /// `frames × hand_width`; non-empty only under `DistEmbed`.
    pub uncertainty: Vec<f64>,
    /// `frames × hand_width`; false where dropout removed the element. Empty
    /// means everything is kept.
    pub keep: Vec<bool>,
}

impl ConditioningVector {
    pub fn head_only(head: &TrackingSignal) -> Self {
        Self {
            strategy: None,
            frames: head.frames(),
            hand_width: 0,
            head: head.head.clone(),
            hands: Vec::new(),
            uncertainty: Vec::new(),
            keep: Vec::new(),
        }
    }

    /// Per-frame width of the concatenated head and hand features.
    pub fn feature_width(&self) -> usize {
        HEAD_DIM + self.per_frame(&self.hands) + self.per_frame(&self.uncertainty)
    }

    fn per_frame<T>(&self, v: &[T]) -> usize {
        v.len().checked_div(self.frames).unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.head.iter().chain(&self.hands).chain(&self.uncertainty).all(|v| v.is_finite())
    }
}

/// Builds the guided condition for one window. With `invert_dropout` the
/// dropout probability becomes `(𝒰 − min)/(max − min)` instead of its complement.
pub fn make_condition<R: Rng>(
    head: &TrackingSignal,
    imputed: &ImputedTrajectory,
    strategy: GuidanceStrategy,
    invert_dropout: bool,
    rng: &mut R,
) -> Result<ConditioningVector> {
    let frames = head.frames();
    if imputed.frames() != frames {
        return Err(Error::Shape(format!(
            "head covers {frames} frames, imputed hands {}",
            imputed.frames()
        )));
    }
    let mu = &imputed.mean;
    let unc = &imputed.uncertainty;
    if unc.len() != mu.len() {
        return Err(Error::Shape("imputed mean and uncertainty differ in length".into()));
    }
    if let Some(u) = unc.iter().find(|u| !(**u >= 0.0)) {
        return Err(Error::Domain(format!("uncertainty {u} is negative or undefined")));
    }
    let hand_width = mu.len() / frames.max(1);
    let mut out = ConditioningVector {
        strategy: Some(strategy),
        frames,
        hand_width,
        head: head.head.clone(),
        hands: mu.clone(),
        uncertainty: Vec::new(),
        keep: Vec::new(),
    };
    match strategy {
        GuidanceStrategy::None => {}
        GuidanceStrategy::Sample => {
            for (h, u) in out.hands.iter_mut().zip(unc) {
                let z: f64 = StandardNormal.sample(rng);
                *h += u.sqrt() * z;
            }
        }
        GuidanceStrategy::Dropout => {
            let p = dropout_probabilities(unc, hand_width, invert_dropout);
            out.keep = p.iter().map(|&p| rng.random::<f64>() >= p).collect();
            for (h, &k) in out.hands.iter_mut().zip(&out.keep) {
                if !k {
                    *h = 0.0;
                }
            }
        }
        GuidanceStrategy::DistEmbed => out.uncertainty = unc.clone(),
    }
    Ok(out)
}

/// Zeroing probability per element of a `frames × width` uncertainty array,
/// normalized per dimension over the sequence. A flat dimension gets 0.
pub fn dropout_probabilities(unc: &[f64], width: usize, invert: bool) -> Vec<f64> {
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for row in unc.chunks_exact(width) {
        for d in 0..width {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    unc.chunks_exact(width)
        .flat_map(|row| {
            (0..width).map(|d| {
                let span = hi[d] - lo[d];
                if !(span > 0.0) {
                    return 0.0;
                }
                let r = ((row[d] - lo[d]) / span).clamp(0.0, 1.0);
                if invert {
                    r
                } else {
                    1.0 - r
                }
            })
        })
        .collect::<Vec<_>>()
}

/// Averaged output of several generation passes over one window.
#[derive(Clone, Debug)]
pub struct MarginalizedMotion {
    /// Mean root and re-projected chordal-mean rotations.
    pub motion: MotionSequence,
    /// Frame-wise mean joint positions; the positional estimate.
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub local_rotations: Vec<Vec<Matrix3<f64>>>,
    /// Per-frame mean over joints of the positional variance across draws, m².
    pub position_variance: Vec<f64>,
}

impl MarginalizedMotion {
    pub fn samples(&self) -> MotionSamples<'_> {
        MotionSamples {
            positions: &self.positions,
            local_rotations: &self.local_rotations,
        }
    }
}

/// Draws `n_samples` conditions, generates and decodes each, then averages
/// the draws frame-wise. Without `imputed` the condition is head-only.
#[allow(clippy::too_many_arguments)]
pub fn marginalized_generate<R: Rng>(
    vq: &VqVae,
    denoiser: &Denoiser,
    head: &TrackingSignal,
    imputed: Option<&ImputedTrajectory>,
    strategy: GuidanceStrategy,
    invert_dropout: bool,
    n_samples: usize,
    inference_steps: usize,
    rng: &mut R,
) -> Result<MarginalizedMotion> {
    let conds = (0..n_samples.max(1))
        .map(|_| match imputed {
            Some(imp) => make_condition(head, imp, strategy, invert_dropout, rng),
            None => Ok(ConditioningVector::head_only(head)),
        })
        .collect::<Result<Vec<_>>>()?;
    let tokens = denoiser.sample(&conds, inference_steps, rng)?;
    let anchors = head_anchors(head, 0, head.frames());
    let anchor_refs: Vec<&[[f64; 2]]> = vec![anchors.as_slice(); tokens.len()];
    average_motions(vq.detokenize(&tokens, &anchor_refs)?)
}

/// Averages joint positions and chordal-means local rotations across draws,
/// frame by frame. A single draw passes through unchanged.
pub fn average_motions(motions: Vec<MotionSequence>) -> Result<MarginalizedMotion> {
    let first = motions.first().ok_or_else(|| Error::Config("nothing to average".into()))?;
    let frames = first.len();
    if motions.iter().any(|m| m.len() != frames || m.skeleton != first.skeleton) {
        return Err(Error::Shape("draws differ in length or skeleton".into()));
    }
    let draws = motions.iter().map(samples_of).collect::<std::result::Result<Vec<_>, _>>()?;
    if motions.len() == 1 {
        let (positions, local_rotations) = draws.into_iter().next().unwrap();
        return Ok(MarginalizedMotion {
            motion: motions.into_iter().next().unwrap(),
            positions,
            local_rotations,
            position_variance: vec![0.0; frames],
        });
    }
    let joints = first.skeleton.joint_count();
    let n = motions.len() as f64;
    let mut positions = Vec::with_capacity(frames);
    let mut local_rotations = Vec::with_capacity(frames);
    let mut position_variance = Vec::with_capacity(frames);
    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        let mean: Vec<Vector3<f64>> = (0..joints)
            .map(|j| draws.iter().map(|d| d.0[t][j]).sum::<Vector3<f64>>() / n)
            .collect();
        let var: f64 = (0..joints)
            .map(|j| draws.iter().map(|d| (d.0[t][j] - mean[j]).norm_squared()).sum::<f64>() / n)
            .sum();
        let rots: Vec<Matrix3<f64>> = (0..joints)
            .map(|j| chordal_mean(&draws.iter().map(|d| d.1[t][j]).collect::<Vec<_>>()))
            .collect();
        poses.push(Pose {
            root: motions.iter().map(|m| m.frames[t].root).sum::<Vector3<f64>>() / n,
            rotations: rots.iter().map(matrix_to_rot6d).collect(),
        });
        position_variance.push(var / joints as f64);
        positions.push(mean);
        local_rotations.push(rots);
    }
    Ok(MarginalizedMotion {
        motion: MotionSequence::new(first.fps, poses, first.skeleton.clone())?,
        positions,
        local_rotations,
        position_variance,
    })
}
