//! Stride-1 convolutional VQ-VAE over motion windows.

use std::path::Path;
use std::sync::Arc;

use candle_core::Tensor;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sparsepose_core::container::{ArrayReader, ArrayWriter};
use sparsepose_core::rotation::sanitize_rot6d;
use sparsepose_core::{MotionSequence, Pose, Skeleton};

use super::quantize::Codebook;
use crate::error::{Error, Result};
use crate::nn::{device, to_f64, Conv1d, ParamStore};
use crate::normalize::Normalizer;

pub const CHECKPOINT_KIND: &str = "sparsepose.tokenizer";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqArch {
    pub hidden: usize,
    pub code_dim: usize,
    pub res_blocks: usize,
    pub kernel: usize,
    pub codebook_size: usize,
}

impl Default for VqArch {
    fn default() -> Self {
        Self {
            hidden: 128,
            code_dim: 128,
            res_blocks: 2,
            kernel: 3,
            codebook_size: 128,
        }
    }
}

/// Per-frame motion features: root translation relative to that frame's
/// anchor (horizontal axes only) followed by every local rotation in 6D.
/// Anchors are the tracked head positions, so the body is encoded relative
/// to the head and the global trajectory comes from tracking.
pub fn motion_features(seq: &MotionSequence, anchors: &[[f64; 2]]) -> Result<Vec<f64>> {
    if anchors.len() != seq.len() {
        return Err(Error::Shape(format!("{} anchors for {} frames", anchors.len(), seq.len())));
    }
    let j = seq.skeleton.joint_count();
    let mut out = Vec::with_capacity(seq.len() * feature_width(j));
    for (p, a) in seq.frames.iter().zip(anchors) {
        out.extend([p.root.x - a[0], p.root.y, p.root.z - a[1]]);
        for r in &p.rotations {
            out.extend_from_slice(r);
        }
    }
    Ok(out)
}

pub fn feature_width(joints: usize) -> usize {
    3 + 6 * joints
}

/// Inverse of [`motion_features`]; rotations are re-orthonormalized.
pub fn features_to_motion(features: &[f64], anchors: &[[f64; 2]], fps: f64, skeleton: Arc<Skeleton>) -> Result<MotionSequence> {
    let j = skeleton.joint_count();
    let f = feature_width(j);
    if features.len() != anchors.len() * f {
        return Err(Error::Shape(format!("{} feature values for {} anchored {f}-wide frames", features.len(), anchors.len())));
    }
    let frames = features
        .chunks_exact(f)
        .zip(anchors)
        .map(|(row, a)| Pose {
            root: Vector3::new(row[0] + a[0], row[1], row[2] + a[1]),
            rotations: row[3..]
                .chunks_exact(6)
                .map(|r| sanitize_rot6d(&[r[0], r[1], r[2], r[3], r[4], r[5]]))
                .collect(),
        })
        .collect();
    Ok(MotionSequence::new(fps, frames, skeleton)?)
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv: Conv1d,
    proj: Conv1d,
}

#[derive(Clone, Debug)]
struct ConvStack {
    input: Conv1d,
    blocks: Vec<ResBlock>,
    output: Conv1d,
}

impl ConvStack {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, hidden: usize, c_out: usize, arch: &VqArch) -> Result<Self> {
        Ok(Self {
            input: Conv1d::new(ps, &format!("{name}.in"), c_in, hidden, arch.kernel)?,
            blocks: (0..arch.res_blocks)
                .map(|i| {
                    Ok(ResBlock {
                        conv: Conv1d::new(ps, &format!("{name}.res{i}.conv"), hidden, hidden, arch.kernel)?,
                        proj: Conv1d::new(ps, &format!("{name}.res{i}.proj"), hidden, hidden, 1)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            output: Conv1d::new(ps, &format!("{name}.out"), hidden, c_out, arch.kernel)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward(x)?;
        for b in &self.blocks {
            let r = b.proj.forward(&b.conv.forward(&h.relu()?)?.relu()?)?;
            h = (h + r)?;
        }
        self.output.forward(&h.relu()?)
    }
}

#[derive(Debug)]
pub struct VqVae {
    pub arch: VqArch,
    pub frames: usize,
    pub fps: f64,
    pub skeleton: Arc<Skeleton>,
    pub normalizer: Normalizer,
    pub codebook: Codebook,
    pub store: ParamStore,
    encoder: ConvStack,
    decoder: ConvStack,
}

impl VqVae {
    /// Codebook starts as placeholder zeros; training seeds it from latents.
    pub fn new(arch: &VqArch, frames: usize, fps: f64, skeleton: Arc<Skeleton>, normalizer: Normalizer, seed: u64) -> Result<Self> {
        let f = feature_width(skeleton.joint_count());
        if normalizer.width() != f {
            return Err(Error::Shape(format!("normalizer width {} but features are {f} wide", normalizer.width())));
        }
        let mut ps = ParamStore::new(seed);
        let encoder = ConvStack::new(&mut ps, "enc", f, arch.hidden, arch.code_dim, arch)?;
        let decoder = ConvStack::new(&mut ps, "dec", arch.code_dim, arch.hidden, f, arch)?;
        let codebook = Codebook::from_vectors(arch.codebook_size, arch.code_dim, vec![0.0; arch.codebook_size * arch.code_dim])?;
        Ok(Self {
            arch: *arch,
            frames,
            fps,
            skeleton,
            normalizer,
            codebook,
            store: ps,
            encoder,
            decoder,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.normalizer.width()
    }

    /// `[B, F, T]` normalized features from windows and their anchors.
    pub fn feature_tensor(&self, windows: &[(&MotionSequence, &[[f64; 2]])]) -> Result<Tensor> {
        let f = self.feature_width();
        let mut data = Vec::with_capacity(windows.len() * f * self.frames);
        for (seq, anchors) in windows {
            if seq.len() != self.frames {
                return Err(Error::Shape(format!("window has {} frames, tokenizer expects {}", seq.len(), self.frames)));
            }
            let mut x = motion_features(seq, anchors)?;
            self.normalizer.apply(&mut x);
            // [T, F] → [F, T]
            for c in 0..f {
                for t in 0..self.frames {
                    data.push(x[t * f + c] as f32);
                }
            }
        }
        Ok(Tensor::from_vec(data, (windows.len(), f, self.frames), &device())?)
    }

    /// `[B, F, T]` → `[B, D, T]`; any length is accepted.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    pub fn decode_tensor(&self, z_q: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z_q)
    }

    /// Latent rows `[B·T, D]` in frame order, from `[B, D, T]`.
    pub fn latent_rows(z: &Tensor) -> Result<Vec<f64>> {
        to_f64(&z.transpose(1, 2)?.contiguous()?)
    }

    /// Prototype tensor `[B, D, T]` for token rows of length T.
    pub fn prototypes(&self, tokens: &[Vec<usize>]) -> Result<Tensor> {
        let b = tokens.len();
        let t = tokens.first().map_or(0, Vec::len);
        if b == 0 || tokens.iter().any(|s| s.len() != t) {
            return Err(Error::Shape("token sequences must be non-empty and equally long".into()));
        }
        let flat: Vec<usize> = tokens.iter().flatten().copied().collect();
        let rows: Vec<f32> = self.codebook.lookup(&flat)?.iter().map(|&v| v as f32).collect();
        Ok(Tensor::from_vec(rows, (b, t, self.arch.code_dim), &device())?
            .transpose(1, 2)?
            .contiguous()?)
    }

    pub fn tokenize(&self, windows: &[(&MotionSequence, &[[f64; 2]])]) -> Result<Vec<Vec<usize>>> {
        let z = self.encode_tensor(&self.feature_tensor(windows)?)?;
        let idx = self.codebook.quantize(&Self::latent_rows(&z)?)?;
        Ok(idx.chunks(self.frames).map(<[usize]>::to_vec).collect())
    }

    /// Decodes token windows back to motion along the given anchors.
    pub fn detokenize(&self, tokens: &[Vec<usize>], anchors: &[&[[f64; 2]]]) -> Result<Vec<MotionSequence>> {
        if tokens.len() != anchors.len() {
            return Err(Error::Shape("one anchor track per token window required".into()));
        }
        let x = self.decode_tensor(&self.prototypes(tokens)?)?;
        self.features_out(&x, anchors)
    }

    /// Converts decoder output `[B, F, T]` to motion sequences.
    pub fn features_out(&self, x: &Tensor, anchors: &[&[[f64; 2]]]) -> Result<Vec<MotionSequence>> {
        let (b, f, t) = x.dims3()?;
        let vals = to_f64(&x.transpose(1, 2)?.contiguous()?)?;
        (0..b)
            .map(|i| {
                let mut row = vals[i * t * f..(i + 1) * t * f].to_vec();
                self.normalizer.invert(&mut row);
                features_to_motion(&row, anchors[i], self.fps, self.skeleton.clone())
            })
            .collect()
    }

    pub fn reconstruct(&self, windows: &[(&MotionSequence, &[[f64; 2]])]) -> Result<Vec<MotionSequence>> {
        let tokens = self.tokenize(windows)?;
        let anchors: Vec<&[[f64; 2]]> = windows.iter().map(|w| w.1).collect();
        self.detokenize(&tokens, &anchors)
    }

    pub fn save(&self, dir: impl AsRef<Path>, history: &[f64]) -> Result<()> {
        let mut w = ArrayWriter::create(dir)?;
        self.store.write(&mut w, "")?;
        let meta = serde_json::json!({
            "arch": self.arch,
            "frames": self.frames,
            "fps": self.fps,
            "skeleton": *self.skeleton,
            "normalizer": self.normalizer,
            "codebook": self.codebook,
            "history": history,
        });
        w.finish(CHECKPOINT_KIND, meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Vec<f64>)> {
        let r = ArrayReader::open(dir)?;
        r.expect_kind(CHECKPOINT_KIND)?;
        let meta = r.meta();
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Config(format!("tokenizer checkpoint lacks {k}")));
        let arch: VqArch = serde_json::from_value(field("arch")?)?;
        let frames: usize = serde_json::from_value(field("frames")?)?;
        let fps: f64 = serde_json::from_value(field("fps")?)?;
        let skeleton: Skeleton = serde_json::from_value(field("skeleton")?)?;
        let normalizer: Normalizer = serde_json::from_value(field("normalizer")?)?;
        let mut vq = Self::new(&arch, frames, fps, Arc::new(skeleton), normalizer, 0)?;
        vq.codebook = serde_json::from_value(field("codebook")?)?;
        vq.store.read(&r, "")?;
        Ok((vq, serde_json::from_value(field("history")?)?))
    }
}
