//! End-to-end orchestration: imputation, guidance, diffusion, decoding and stitching.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sparsepose_core::metrics::{compute_metrics_from_samples, samples_of, MotionSamples};
use sparsepose_core::rotation::nearest_rotation;
use sparsepose_core::synth::dataset::Sample;
use sparsepose_core::{MetricRecord, TrackingSignal, VisibilityMask};
use sparsepose_models::diffusion::Denoiser;
use sparsepose_models::guidance::{average_motions, make_condition, ConditioningVector, GuidanceStrategy};
use sparsepose_models::imputer::{interpolate_baseline, ImputedTrajectory, ImputerEnsemble, ImputerInput, UncertaintyKind};
use sparsepose_models::tokenizer::VqVae;
use sparsepose_models::windows::{head_anchors, stitch, window_starts, StitchMode};

use crate::config::{InferenceConfig, Mode};
use crate::error::{CliError, Result};
use crate::workspace::Workspace;

/// Trained models; absent members are only an error when a regime needs them.
pub struct ModelStack {
    pub vq: VqVae,
    pub imputer: Option<ImputerEnsemble>,
    pub guided: Option<Denoiser>,
    pub head_only: Option<Denoiser>,
}

impl ModelStack {
    /// Checkpoints the given modes need.
    pub fn required(ws: &Workspace, modes: &[Mode]) -> Vec<PathBuf> {
        let mut need = vec![ws.tokenizer()];
        if modes.contains(&Mode::DoublySparse) {
            need.push(ws.imputer());
        }
        if modes.contains(&Mode::DoublySparse) || modes.contains(&Mode::DenseHands) {
            need.push(ws.denoiser());
        }
        if modes.contains(&Mode::HeadOnly) {
            need.push(ws.head_only_denoiser());
        }
        need
    }

    /// Loads the tokenizer plus whichever of the other checkpoints `modes` need.
    pub fn load(ws: &Workspace, modes: &[Mode]) -> Result<Self> {
        let need = Self::required(ws, modes);
        let sparse = modes.contains(&Mode::DoublySparse);
        let guided = sparse || modes.contains(&Mode::DenseHands);
        let head = modes.contains(&Mode::HeadOnly);
        Workspace::require(&need)?;
        Ok(Self {
            vq: VqVae::load(ws.tokenizer())?.0,
            imputer: if sparse { Some(ImputerEnsemble::load(ws.imputer())?) } else { None },
            guided: if guided { Some(Denoiser::load(ws.denoiser())?.0) } else { None },
            head_only: if head { Some(Denoiser::load(ws.head_only_denoiser())?.0) } else { None },
        })
    }

    pub fn window(&self) -> usize {
        self.vq.frames
    }
}

/// Where the hand condition comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandSource {
    None,
    Imputed,
    /// Linear interpolation between detections, zero uncertainty.
    Interpolated,
    /// Ground-truth tracked hands, zero uncertainty.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Tokenize and decode the ground truth.
    Reconstruction,
    Generation {
        hands: HandSource,
        strategy: Option<GuidanceStrategy>,
    },
}

impl Regime {
    pub fn for_mode(mode: Mode, strategy: GuidanceStrategy) -> Self {
        match mode {
            Mode::HeadOnly => Regime::Generation {
                hands: HandSource::None,
                strategy: None,
            },
            Mode::DoublySparse => Regime::Generation {
                hands: HandSource::Imputed,
                strategy: Some(strategy),
            },
            Mode::DenseHands => Regime::Generation {
                hands: HandSource::GroundTruth,
                strategy: Some(strategy),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Regime::Reconstruction => "vqvae_reconstruction".into(),
            Regime::Generation {
                hands: HandSource::None, ..
            } => "head_only".into(),
            Regime::Generation { hands, strategy } => {
                let base = match hands {
                    HandSource::Imputed => "doubly_sparse",
                    HandSource::Interpolated => "interpolation_baseline",
                    HandSource::GroundTruth => "dense_hands",
                    HandSource::None => unreachable!(),
                };
                format!("{base}/{}", strategy.map_or("none", |s| s.name()))
            }
        }
    }
}

/// Stitched full-sequence estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePrediction {
    pub index: usize,
    pub positions: Vec<Vec<Vector3<f64>>>,
    pub local_rotations: Vec<Vec<Matrix3<f64>>>,
    pub metrics: MetricRecord,
    /// Mean over frames of the positional variance across draws, m².
    pub position_variance: f64,
}

#[derive(Clone, Debug)]
pub struct RegimeOutput {
    pub regime: Regime,
    pub predictions: Vec<SequencePrediction>,
    /// Wall time spent in the reverse sampler.
    pub sampling_seconds: f64,
}

struct WindowJob {
    seq: usize,
    start: usize,
    head: TrackingSignal,
    hands: Option<ImputedTrajectory>,
}

pub fn run_regime(stack: &ModelStack, samples: &[Sample], regime: &Regime, inf: &InferenceConfig, seed: u64) -> Result<RegimeOutput> {
    let w = stack.window();
    let mut jobs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for start in window_starts(s.motion.len(), w, inf.stride)? {
            jobs.push(WindowJob {
                seq: i,
                start,
                head: s.signal.window(start, w)?,
                hands: None,
            });
        }
    }
    let (hands, strategy) = match regime {
        Regime::Reconstruction => return reconstruct(stack, samples, jobs, inf.stride),
        Regime::Generation { hands, strategy } => (*hands, *strategy),
    };
    attach_hands(stack, samples, &mut jobs, hands, inf.uncertainty)?;
    let denoiser = match hands {
        HandSource::None => stack.head_only.as_ref(),
        _ => stack.guided.as_ref(),
    }
    .ok_or_else(|| CliError::Config(format!("no denoiser loaded for {}", regime.name())))?;
    let steps = inf.steps.unwrap_or(denoiser.steps());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = inf.n_samples.max(1);
    let mut conds = Vec::with_capacity(jobs.len() * draws);
    for job in &jobs {
        for _ in 0..draws {
            conds.push(match (&job.hands, strategy) {
                (Some(h), Some(s)) => make_condition(&job.head, h, s, inf.invert_dropout, &mut rng)?,
                _ => ConditioningVector::head_only(&job.head),
            });
        }
    }
    let clock = Instant::now();
    let mut tokens = Vec::with_capacity(conds.len());
    for chunk in conds.chunks(inf.batch_size.max(1)) {
        tokens.extend(denoiser.sample(chunk, steps, &mut rng)?);
    }
    let sampling_seconds = clock.elapsed().as_secs_f64();

    let mut per_window = Vec::with_capacity(jobs.len());
    for (job, toks) in jobs.iter().zip(tokens.chunks(draws)) {
        let anchors = head_anchors(&samples[job.seq].signal, job.start, w);
        let refs: Vec<&[[f64; 2]]> = vec![anchors.as_slice(); toks.len()];
        let avg = average_motions(stack.vq.detokenize(toks, &refs)?)?;
        let var = avg.position_variance.iter().sum::<f64>() / avg.position_variance.len().max(1) as f64;
        per_window.push((avg.positions, avg.local_rotations, var));
    }
    let predictions = stitch_sequences(samples, &jobs, per_window, w, inf.stride)?;
    Ok(RegimeOutput {
        regime: regime.clone(),
        predictions,
        sampling_seconds,
    })
}

fn attach_hands(stack: &ModelStack, samples: &[Sample], jobs: &mut [WindowJob], source: HandSource, kind: UncertaintyKind) -> Result<()> {
    let w = stack.window();
    match source {
        HandSource::None => {}
        HandSource::Imputed => {
            let imputer = stack
                .imputer
                .as_ref()
                .ok_or_else(|| CliError::Config("doubly sparse generation needs the imputer".into()))?;
            let inputs = jobs
                .iter()
                .map(|j| ImputerInput::from_sample(&samples[j.seq], j.start, w))
                .collect::<sparsepose_models::Result<Vec<_>>>()?;
            for (job, imp) in jobs.iter_mut().zip(imputer.impute(&inputs, kind)?) {
                job.hands = Some(imp);
            }
        }
        HandSource::Interpolated => {
            let full = samples.iter().map(interpolated_sequence).collect::<Result<Vec<_>>>()?;
            for job in jobs.iter_mut() {
                job.hands = Some(window_of(&full[job.seq], job.start, w));
            }
        }
        HandSource::GroundTruth => {
            for job in jobs.iter_mut() {
                let h = &job.head;
                job.hands = Some(ImputedTrajectory {
                    hand_dim: h.hand_dim,
                    mean: h.hands.clone(),
                    uncertainty: vec![0.0; h.hands.len()],
                    kind,
                    mask: VisibilityMask::all(h.frames(), true),
                });
            }
        }
    }
    Ok(())
}

/// Linear interpolation of the sparse detections over a whole sequence.
pub fn interpolated_sequence(sample: &Sample) -> Result<ImputedTrajectory> {
    let input = ImputerInput::new(&sample.signal, &sample.detections, &sample.mask)?;
    let w = input.hand_width();
    let mean = interpolate_baseline(&input.hands, &input.mask, w)?;
    Ok(ImputedTrajectory {
        hand_dim: input.hand_dim,
        uncertainty: vec![0.0; mean.len()],
        mean,
        kind: UncertaintyKind::Aleatoric,
        mask: input.mask,
    })
}

fn window_of(t: &ImputedTrajectory, start: usize, len: usize) -> ImputedTrajectory {
    let per = 2 * t.hand_dim.width();
    let r = start * per..(start + len) * per;
    ImputedTrajectory {
        hand_dim: t.hand_dim,
        mean: t.mean[r.clone()].to_vec(),
        uncertainty: t.uncertainty[r].to_vec(),
        kind: t.kind,
        mask: t.mask.window(start, len),
    }
}

fn reconstruct(stack: &ModelStack, samples: &[Sample], jobs: Vec<WindowJob>, stride: usize) -> Result<RegimeOutput> {
    let w = stack.window();
    let mut per_window = Vec::with_capacity(jobs.len());
    let clock = Instant::now();
    for chunk in jobs.chunks(64) {
        let windows = chunk
            .iter()
            .map(|j| {
                let s = &samples[j.seq];
                Ok((s.motion.window(j.start, w)?, head_anchors(&s.signal, j.start, w)))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = windows.iter().map(|(m, a)| (m, a.as_slice())).collect();
        for m in stack.vq.reconstruct(&refs)? {
            let (p, r) = samples_of(&m)?;
            per_window.push((p, r, 0.0));
        }
    }
    let sampling_seconds = clock.elapsed().as_secs_f64();
    Ok(RegimeOutput {
        regime: Regime::Reconstruction,
        predictions: stitch_sequences(samples, &jobs, per_window, w, stride)?,
        sampling_seconds,
    })
}

type WindowEstimate = (Vec<Vec<Vector3<f64>>>, Vec<Vec<Matrix3<f64>>>, f64);

fn stitch_sequences(samples: &[Sample], jobs: &[WindowJob], per_window: Vec<WindowEstimate>, w: usize, stride: usize) -> Result<Vec<SequencePrediction>> {
    let mode = StitchMode::for_stride(stride);
    let mut out = Vec::with_capacity(samples.len());
    let mut it = jobs.iter().zip(per_window).peekable();
    for (i, s) in samples.iter().enumerate() {
        let joints = s.motion.skeleton.joint_count();
        let (mut starts, mut pos, mut rot, mut vars) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        while let Some((job, _)) = it.peek() {
            if job.seq != i {
                break;
            }
            let (job, (p, r, v)) = it.next().unwrap();
            starts.push(job.start);
            pos.push(p.iter().flatten().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f64>>());
            rot.push(r.iter().flatten().flat_map(|m| m.iter().copied().collect::<Vec<_>>()).collect::<Vec<f64>>());
            vars.push(v);
        }
        let frames = s.motion.len();
        let pos = stitch(&pos, &starts, frames, w, joints * 3, mode)?;
        let rot = stitch(&rot, &starts, frames, w, joints * 9, mode)?;
        let positions: Vec<Vec<Vector3<f64>>> = pos
            .chunks_exact(joints * 3)
            .map(|f| f.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
            .collect();
        let local_rotations: Vec<Vec<Matrix3<f64>>> = rot
            .chunks_exact(joints * 9)
            .map(|f| f.chunks_exact(9).map(|c| nearest_rotation(&Matrix3::from_column_slice(c))).collect())
            .collect();
        let (gp, gr) = samples_of(&s.motion)?;
        let metrics = compute_metrics_from_samples(
            &s.motion.skeleton,
            s.motion.fps,
            &MotionSamples {
                positions: &positions,
                local_rotations: &local_rotations,
            },
            &MotionSamples {
                positions: &gp,
                local_rotations: &gr,
            },
        )?;
        if !metrics.mpjpe_cm.is_finite() {
            return Err(CliError::Numeric(format!("sequence {i} produced a non-finite MPJPE")));
        }
        out.push(SequencePrediction {
            index: i,
            positions,
            local_rotations,
            metrics,
            position_variance: vars.iter().sum::<f64>() / vars.len().max(1) as f64,
        });
    }
    Ok(out)
}

/// Full-length imputation stitched from non-overlapping windows.
pub fn impute_sequence(imputer: &ImputerEnsemble, sample: &Sample, kind: UncertaintyKind) -> Result<ImputedTrajectory> {
    let w = imputer.frames();
    let frames = sample.motion.len();
    let starts = window_starts(frames, w, w)?;
    let inputs = starts
        .iter()
        .map(|&s| ImputerInput::from_sample(sample, s, w))
        .collect::<sparsepose_models::Result<Vec<_>>>()?;
    let out = imputer.impute(&inputs, kind)?;
    let width = 2 * imputer.hand_dim.width();
    let means: Vec<Vec<f64>> = out.iter().map(|o| o.mean.clone()).collect();
    let uncs: Vec<Vec<f64>> = out.iter().map(|o| o.uncertainty.clone()).collect();
    Ok(ImputedTrajectory {
        hand_dim: imputer.hand_dim,
        mean: stitch(&means, &starts, frames, w, width, StitchMode::Tile)?,
        uncertainty: stitch(&uncs, &starts, frames, w, width, StitchMode::Tile)?,
        kind,
        mask: sample.mask.clone(),
    })
}

/// Hand-position imputation quality on invisible frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationEval {
    /// Per-sequence mean wrist error over invisible frames, cm; sequences
    /// without invisible frames are skipped.
    pub mae_cm: Vec<f64>,
    pub interpolation_cm: Vec<f64>,
    /// Pooled over every invisible hand-frame.
    pub pooled_mae_cm: f64,
    pub pooled_interpolation_cm: f64,
    pub invisible_hand_frames: usize,
    /// Share of invisible position coordinates within two aleatoric standard deviations.
    pub calibration_2sigma: f64,
}

pub fn evaluate_imputation(imputer: &ImputerEnsemble, samples: &[Sample]) -> Result<ImputationEval> {
    let w = imputer.hand_dim.width();
    let (mut mae_seq, mut int_seq) = (Vec::new(), Vec::new());
    let (mut mae_sum, mut int_sum, mut n) = (0.0, 0.0, 0usize);
    let (mut inside, mut coords) = (0usize, 0usize);
    for s in samples {
        let imp = impute_sequence(imputer, s, UncertaintyKind::Aleatoric)?;
        let interp = interpolated_sequence(s)?;
        let gt = &s.signal.hands;
        let (mut a, mut b, mut m) = (0.0, 0.0, 0usize);
        for (t, vis) in s.mask.visible.iter().enumerate() {
            for side in 0..2 {
                if vis[side] {
                    continue;
                }
                let o = (t * 2 + side) * w;
                let dist = |x: &[f64]| (0..3).map(|c| (x[o + c] - gt[o + c]).powi(2)).sum::<f64>().sqrt();
                a += dist(&imp.mean);
                b += dist(&interp.mean);
                m += 1;
                for c in 0..3 {
                    coords += 1;
                    if (imp.mean[o + c] - gt[o + c]).abs() <= 2.0 * imp.uncertainty[o + c].sqrt() {
                        inside += 1;
                    }
                }
            }
        }
        if m > 0 {
            mae_seq.push(100.0 * a / m as f64);
            int_seq.push(100.0 * b / m as f64);
            mae_sum += a;
            int_sum += b;
            n += m;
        }
    }
    let pooled = |x: f64| if n > 0 { 100.0 * x / n as f64 } else { 0.0 };
    Ok(ImputationEval {
        mae_cm: mae_seq,
        interpolation_cm: int_seq,
        pooled_mae_cm: pooled(mae_sum),
        pooled_interpolation_cm: pooled(int_sum),
        invisible_hand_frames: n,
        calibration_2sigma: if coords > 0 { inside as f64 / coords as f64 } else { 1.0 },
    })
}
