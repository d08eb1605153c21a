//! Train/val/test splits persisted in the array container format.
//!
//! All stored reals are rounded to f32 before anything is derived from them,
//! so an in-memory build and a reload compare equal bit for bit.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::{generate_motion, GeneratorConfig};
use super::tracking::{derive_tracking_signal, HandDim, HandSide, TrackingSignal, HEAD_DIM};
use super::visibility::{compute_visibility, VisibilityConfig, VisibilityMask};
use crate::container::{round_f32, ArrayReader, ArrayWriter};
use crate::error::{Error, Result};
use crate::hand::detection::{simulate_detections, HandDetection, HandDetections, DEFAULT_NOISE_SIGMA_M};
use crate::motion::{MotionSequence, Pose};
use crate::skeleton::Skeleton;

pub const SPLIT_KIND: &str = "sparsepose.dataset_split";
pub const DATASET_FILE: &str = "dataset.json";

/// Mixed into the sequence seed for the detector noise stream.
const DETECTION_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Seeds `start..start + count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub count: usize,
}

impl SeedRange {
    pub fn seeds(self) -> impl Iterator<Item = u64> {
        (0..self.count as u64).map(move |i| self.start + i)
    }

    fn end(self) -> u64 {
        self.start.saturating_add(self.count as u64)
    }

    fn overlaps(self, other: SeedRange) -> bool {
        self.count > 0 && other.count > 0 && self.start < other.end() && other.start < self.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSeeds {
    pub train: SeedRange,
    pub val: SeedRange,
    pub test: SeedRange,
}

impl SplitSeeds {
    /// Consecutive ranges starting at `base`.
    pub fn consecutive(base: u64, train: usize, val: usize, test: usize) -> Self {
        let train_r = SeedRange { start: base, count: train };
        let val_r = SeedRange {
            start: train_r.end(),
            count: val,
        };
        let test_r = SeedRange {
            start: val_r.end(),
            count: test,
        };
        Self {
            train: train_r,
            val: val_r,
            test: test_r,
        }
    }

    pub fn get(&self, tag: SplitTag) -> SeedRange {
        match tag {
            SplitTag::Train => self.train,
            SplitTag::Val => self.val,
            SplitTag::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        for i in 0..3 {
            for j in i + 1..3 {
                if r[i].overlaps(r[j]) {
                    return Err(Error::Config(format!(
                        "seed ranges of {} and {} overlap",
                        SplitTag::ALL[i].name(),
                        SplitTag::ALL[j].name()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for SplitSeeds {
    fn default() -> Self {
        Self::consecutive(1000, 80, 10, 10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub generator: GeneratorConfig,
    pub visibility: VisibilityConfig,
    pub hand_dim: HandDim,
    pub noise_sigma_m: f64,
    pub seeds: SplitSeeds,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            visibility: VisibilityConfig::default(),
            hand_dim: HandDim::PositionRotation,
            noise_sigma_m: DEFAULT_NOISE_SIGMA_M,
            seeds: SplitSeeds::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.seeds.validate()?;
        if !(self.noise_sigma_m >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub motion: MotionSequence,
    pub signal: TrackingSignal,
    pub mask: VisibilityMask,
    pub detections: HandDetections,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub tag: SplitTag,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

impl Dataset {
    pub fn split(&self, tag: SplitTag) -> &DatasetSplit {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

fn rounded_motion(seq: MotionSequence) -> Result<MotionSequence> {
    let frames = seq
        .frames
        .into_iter()
        .map(|p| Pose {
            root: p.root.map(round_f32),
            rotations: p.rotations.into_iter().map(|r| r.map(round_f32)).collect(),
        })
        .collect();
    MotionSequence::new(seq.fps, frames, seq.skeleton)
}

/// One sample as stored: motion, its tracking signal, visibility and noisy detections.
pub fn generate_sample(cfg: &DatasetConfig, seed: u64) -> Result<Sample> {
    let motion = rounded_motion(generate_motion(&cfg.generator, seed)?)?;
    let mut signal = derive_tracking_signal(&motion, cfg.hand_dim)?;
    signal.head.iter_mut().for_each(|v| *v = round_f32(*v));
    signal.hands.iter_mut().for_each(|v| *v = round_f32(*v));
    let mask = compute_visibility(&motion, &cfg.visibility)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DETECTION_STREAM);
    let mut detections = simulate_detections(&signal, &mask, cfg.noise_sigma_m, &mut rng)?;
    for e in &mut detections.entries {
        e.state.iter_mut().for_each(|v| *v = round_f32(*v));
    }
    Ok(Sample {
        seed,
        motion,
        signal,
        mask,
        detections,
    })
}

pub fn generate_split(cfg: &DatasetConfig, tag: SplitTag) -> Result<DatasetSplit> {
    cfg.validate()?;
    let samples = cfg
        .seeds
        .get(tag)
        .seeds()
        .map(|seed| generate_sample(cfg, seed))
        .collect::<Result<_>>()?;
    Ok(DatasetSplit { tag, samples })
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        config: cfg.clone(),
        train: generate_split(cfg, SplitTag::Train)?,
        val: generate_split(cfg, SplitTag::Val)?,
        test: generate_split(cfg, SplitTag::Test)?,
    })
}

/// Generates all three splits and writes them under `dir/{train,val,test}`.
pub fn build_dataset(cfg: &DatasetConfig, dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let dataset = generate_dataset(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(DATASET_FILE);
    fs::write(&path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&path, e))?;
    for tag in SplitTag::ALL {
        write_split(cfg, dataset.split(tag), dir.join(tag.name()))?;
    }
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    tag: SplitTag,
    seeds: Vec<u64>,
    frames: usize,
    fps: f64,
    joints: usize,
    head_dim: usize,
    hand_dim: HandDim,
    skeleton: Skeleton,
    config: DatasetConfig,
}

pub fn write_split(cfg: &DatasetConfig, split: &DatasetSplit, dir: impl AsRef<Path>) -> Result<()> {
    let n = split.samples.len();
    let frames = cfg.generator.frames;
    let skeleton = split
        .samples
        .first()
        .map(|s| (*s.motion.skeleton).clone())
        .unwrap_or_else(Skeleton::humanoid);
    let j = skeleton.joint_count();
    let w = cfg.hand_dim.width();

    let mut root = Vec::with_capacity(n * frames * 3);
    let mut rotations = Vec::with_capacity(n * frames * j * 6);
    let mut head = Vec::with_capacity(n * frames * HEAD_DIM);
    let mut hands = Vec::with_capacity(n * frames * 2 * w);
    let mut mask = Vec::with_capacity(n * frames * 2);
    let mut det_index = Vec::new();
    let mut det_state = Vec::new();
    for (i, s) in split.samples.iter().enumerate() {
        if s.motion.len() != frames || s.signal.hand_dim != cfg.hand_dim {
            return Err(Error::Shape(format!("sample {i} does not match the split dimensions")));
        }
        for p in &s.motion.frames {
            root.extend(p.root.iter());
            rotations.extend(p.rotations.iter().flatten());
        }
        head.extend(&s.signal.head);
        hands.extend(&s.signal.hands);
        mask.extend(s.mask.visible.iter().flatten().map(|&v| v as u8));
        for e in &s.detections.entries {
            det_index.extend([i as u32, e.frame as u32, e.side.index() as u32]);
            det_state.extend(&e.state);
        }
    }

    let mut wr = ArrayWriter::create(dir)?;
    wr.f32("root", &[n, frames, 3], &root)?;
    wr.f32("rotations", &[n, frames, j, 6], &rotations)?;
    wr.f32("head", &[n, frames, HEAD_DIM], &head)?;
    wr.f32("hands", &[n, frames, 2, w], &hands)?;
    wr.u8("mask", &[n, frames, 2], &mask)?;
    wr.u32("detections_index", &[det_index.len() / 3, 3], &det_index)?;
    wr.f32("detections_state", &[det_state.len() / w, w], &det_state)?;
    let meta = SplitMeta {
        tag: split.tag,
        seeds: split.samples.iter().map(|s| s.seed).collect(),
        frames,
        fps: cfg.generator.fps,
        joints: j,
        head_dim: HEAD_DIM,
        hand_dim: cfg.hand_dim,
        skeleton,
        config: cfg.clone(),
    };
    wr.finish(SPLIT_KIND, serde_json::to_value(meta)?)?;
    Ok(())
}

pub fn load_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let r = ArrayReader::open(dir)?;
    r.expect_kind(SPLIT_KIND)?;
    let meta: SplitMeta = serde_json::from_value(r.meta().clone())
        .map_err(|e| Error::format(dir, format!("bad split metadata: {e}")))?;
    let (n, t, j, w) = (meta.seeds.len(), meta.frames, meta.joints, meta.hand_dim.width());
    let check = |name: &str, expected: &[usize]| -> Result<Vec<f64>> {
        let (shape, v) = r.f32(name)?;
        if shape != expected {
            return Err(Error::format(dir, format!("{name} has shape {shape:?}, expected {expected:?}")));
        }
        Ok(v)
    };
    let root = check("root", &[n, t, 3])?;
    let rotations = check("rotations", &[n, t, j, 6])?;
    let head = check("head", &[n, t, HEAD_DIM])?;
    let hands = check("hands", &[n, t, 2, w])?;
    let (mshape, mask) = r.u8("mask")?;
    if mshape != [n, t, 2] || mask.iter().any(|&m| m > 1) {
        return Err(Error::format(dir, "mask must be an [n, frames, 2] array of 0/1"));
    }
    let (ishape, det_index) = r.u32("detections_index")?;
    let (sshape, det_state) = r.f32("detections_state")?;
    if ishape.len() != 2 || ishape[1] != 3 || sshape != [ishape[0], w] {
        return Err(Error::format(dir, "detection tables have inconsistent shapes"));
    }

    let skeleton = Arc::new(meta.skeleton);
    if skeleton.joint_count() != j {
        return Err(Error::format(dir, "skeleton joint count disagrees with arrays"));
    }
    let mut samples = Vec::with_capacity(n);
    for (i, &seed) in meta.seeds.iter().enumerate() {
        let poses = (0..t)
            .map(|f| {
                let base = (i * t + f) * 3;
                let rbase = (i * t + f) * j * 6;
                Pose {
                    root: Vector3::new(root[base], root[base + 1], root[base + 2]),
                    rotations: (0..j)
                        .map(|k| {
                            let o = rbase + k * 6;
                            rotations[o..o + 6].try_into().unwrap()
                        })
                        .collect(),
                }
            })
            .collect();
        let motion = MotionSequence::new(meta.fps, poses, skeleton.clone())?;
        let signal = TrackingSignal {
            fps: meta.fps,
            hand_dim: meta.hand_dim,
            head: head[i * t * HEAD_DIM..(i + 1) * t * HEAD_DIM].to_vec(),
            hands: hands[i * t * 2 * w..(i + 1) * t * 2 * w].to_vec(),
        };
        let visible = (0..t)
            .map(|f| {
                let o = (i * t + f) * 2;
                [mask[o] == 1, mask[o + 1] == 1]
            })
            .collect();
        samples.push(Sample {
            seed,
            motion,
            signal,
            mask: VisibilityMask { visible },
            detections: HandDetections::empty(t, meta.hand_dim),
        });
    }
    for (row, state) in det_index.chunks_exact(3).zip(det_state.chunks_exact(w)) {
        let (i, frame, side) = (row[0] as usize, row[1] as usize, row[2] as usize);
        if i >= n || frame >= t || side > 1 {
            return Err(Error::format(dir, format!("detection index {row:?} out of range")));
        }
        samples[i].detections.entries.push(HandDetection {
            frame,
            side: HandSide::from_index(side),
            state: state.to_vec(),
        });
    }
    Ok(DatasetSplit { tag: meta.tag, samples })
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(DATASET_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: DatasetConfig =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("bad dataset config: {e}")))?;
    Ok(Dataset {
        config,
        train: load_split(dir.join("train"))?,
        val: load_split(dir.join("val"))?,
        test: load_split(dir.join("test"))?,
    })
}
