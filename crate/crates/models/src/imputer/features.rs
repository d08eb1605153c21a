//! Window inputs, canonicalization and tokenization for the masked autoencoder.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sparsepose_core::hand::detection::HandDetections;
use sparsepose_core::synth::dataset::Sample;
use sparsepose_core::synth::tracking::{head_layout, HandDim, TrackingSignal, HEAD_DIM};
use sparsepose_core::VisibilityMask;

use crate::error::{Error, Result};
use crate::nn::{device, sinusoidal_table};
use crate::normalize::Normalizer;

/// Token slots per frame: head, left hand, right hand.
pub const SLOTS_PER_FRAME: usize = 3;

/// One window of imputer input in data units.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputerInput {
    pub hand_dim: HandDim,
    /// `frames × HEAD_DIM`.
    pub head: Vec<f64>,
    /// `frames × 2 × hand_width`; zero where the hand is invisible.
    pub hands: Vec<f64>,
    pub mask: VisibilityMask,
}

impl ImputerInput {
    /// Pairs a head signal with sparse detections. Visible frames must carry a
    /// detection; detections on invisible frames are dropped.
    pub fn new(signal: &TrackingSignal, detections: &HandDetections, mask: &VisibilityMask) -> Result<Self> {
        let frames = signal.frames();
        if detections.frames != frames || mask.frames() != frames {
            return Err(Error::Shape(format!(
                "head has {frames} frames, detections {}, mask {}",
                detections.frames,
                mask.frames()
            )));
        }
        if detections.hand_dim != signal.hand_dim {
            return Err(Error::Shape("detections and signal disagree on the hand state width".into()));
        }
        let w = signal.hand_dim.width();
        let table = detections.lookup();
        let mut hands = vec![0.0; frames * 2 * w];
        for (t, row) in table.iter().enumerate() {
            for s in 0..2 {
                if !mask.visible[t][s] {
                    continue;
                }
                let state = row[s].ok_or_else(|| Error::Shape(format!("frame {t} hand {s} is visible but undetected")))?;
                hands[(t * 2 + s) * w..(t * 2 + s + 1) * w].copy_from_slice(state);
            }
        }
        Ok(Self {
            hand_dim: signal.hand_dim,
            head: signal.head.clone(),
            hands,
            mask: mask.clone(),
        })
    }

    /// Window `[start, start + len)` of a dataset sample using its simulated detections.
    pub fn from_sample(sample: &Sample, start: usize, len: usize) -> Result<Self> {
        let signal = sample.signal.window(start, len)?;
        Self::new(&signal, &sample.detections.window(start, len), &sample.mask.window(start, len))
    }

    /// Dense ground-truth hands as input, every hand marked visible.
    pub fn dense(signal: &TrackingSignal) -> Self {
        Self {
            hand_dim: signal.hand_dim,
            head: signal.head.clone(),
            hands: signal.hands.clone(),
            mask: VisibilityMask::all(signal.frames(), true),
        }
    }

    pub fn frames(&self) -> usize {
        self.mask.frames()
    }

    pub fn hand_width(&self) -> usize {
        self.hand_dim.width()
    }

    /// Horizontal head position at the first frame; the canonical origin.
    pub fn origin(&self) -> [f64; 2] {
        let p = head_layout::POSITION.start;
        [self.head[p], self.head[p + 2]]
    }
}

/// Subtracts the window origin from horizontal head and hand positions, in place.
pub fn canonicalize(head: &mut [f64], hands: &mut [f64], hand_width: usize, origin: [f64; 2]) {
    let p = head_layout::POSITION.start;
    for row in head.chunks_exact_mut(HEAD_DIM) {
        row[p] -= origin[0];
        row[p + 2] -= origin[1];
    }
    for row in hands.chunks_exact_mut(hand_width) {
        row[0] -= origin[0];
        row[2] -= origin[1];
    }
}

pub fn decanonicalize(hands: &mut [f64], hand_width: usize, origin: [f64; 2]) {
    for row in hands.chunks_exact_mut(hand_width) {
        row[0] += origin[0];
        row[2] += origin[1];
    }
}

/// Normalizers for canonicalized head features and per-side hand states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub head: Normalizer,
    /// Width `2 × hand_width`: left then right.
    pub hands: Normalizer,
}

impl FeatureNormalizer {
    /// Fits on canonicalized windows of ground-truth signals.
    pub fn fit(signals: &[TrackingSignal]) -> Result<Self> {
        let first = signals.first().ok_or_else(|| Error::Config("no windows to fit the normalizer".into()))?;
        let w = first.hand_dim.width();
        let mut heads = Vec::new();
        let mut hands = Vec::new();
        for s in signals {
            if s.hand_dim.width() != w {
                return Err(Error::Shape("mixed hand state widths".into()));
            }
            let p = head_layout::POSITION.start;
            let origin = [s.head[p], s.head[p + 2]];
            let (mut h, mut d) = (s.head.clone(), s.hands.clone());
            canonicalize(&mut h, &mut d, w, origin);
            heads.extend(h);
            hands.extend(d);
        }
        Ok(Self {
            head: Normalizer::fit(&heads, HEAD_DIM)?,
            hands: Normalizer::fit(&hands, 2 * w)?,
        })
    }

    pub fn hand_width(&self) -> usize {
        self.hands.width() / 2
    }
}

/// Slot geometry and positional encodings shared by every ensemble member.
#[derive(Clone, Debug)]
pub struct TokenLayout {
    pub frames: usize,
    pub d_model: usize,
    pub hand_width: usize,
    /// `[3·frames, d_model]`, slot `3τ + m`.
    pub positional: Tensor,
}

impl TokenLayout {
    pub fn new(frames: usize, d_model: usize, hand_width: usize) -> Result<Self> {
        if frames == 0 || d_model == 0 {
            return Err(Error::Config("token layout needs positive frames and width".into()));
        }
        let n = SLOTS_PER_FRAME * frames;
        let positional = Tensor::from_vec(sinusoidal_table(n, d_model), (n, d_model), &device())?;
        Ok(Self {
            frames,
            d_model,
            hand_width,
            positional,
        })
    }

    pub fn slots(&self) -> usize {
        SLOTS_PER_FRAME * self.frames
    }
}

/// Which token slots the encoder may attend to, slot `3τ + m`.
pub fn attention_mask(mask: &VisibilityMask) -> Vec<bool> {
    mask.visible.iter().flat_map(|v| [true, v[0], v[1]]).collect()
}

/// Normalized model inputs and optional targets for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedWindow {
    pub head: Vec<f32>,
    /// Zeroed on invisible slots.
    pub hands: Vec<f32>,
    pub visible: Vec<f32>,
    pub target: Option<Vec<f32>>,
    pub origin: [f64; 2],
}

impl PreparedWindow {
    pub fn new(input: &ImputerInput, target: Option<&[f64]>, norm: &FeatureNormalizer) -> Result<Self> {
        let w = input.hand_width();
        if norm.hand_width() != w {
            return Err(Error::Shape(format!("normalizer expects hand width {}, input has {w}", norm.hand_width())));
        }
        let frames = input.frames();
        if input.head.len() != frames * HEAD_DIM || input.hands.len() != frames * 2 * w {
            return Err(Error::Shape("imputer input arrays disagree with the mask length".into()));
        }
        let origin = input.origin();
        let (mut head, mut hands) = (input.head.clone(), input.hands.clone());
        canonicalize(&mut head, &mut hands, w, origin);
        norm.head.apply(&mut head);
        norm.hands.apply(&mut hands);
        for (t, v) in input.mask.visible.iter().enumerate() {
            for s in 0..2 {
                if !v[s] {
                    hands[(t * 2 + s) * w..(t * 2 + s + 1) * w].fill(0.0);
                }
            }
        }
        let target = match target {
            Some(y) => {
                if y.len() != frames * 2 * w {
                    return Err(Error::Shape("target length disagrees with the input".into()));
                }
                let mut y = y.to_vec();
                let mut no_head = [];
                canonicalize(&mut no_head, &mut y, w, origin);
                norm.hands.apply(&mut y);
                Some(y.iter().map(|&v| v as f32).collect())
            }
            None => None,
        };
        let visible = attention_mask(&input.mask).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            head: head.iter().map(|&v| v as f32).collect(),
            hands: hands.iter().map(|&v| v as f32).collect(),
            visible,
            target,
            origin,
        })
    }
}

/// A batch of tokenized windows.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    pub batch: usize,
    pub frames: usize,
    pub hand_width: usize,
    /// `[B, T, HEAD_DIM]`.
    pub head: Tensor,
    /// `[B, T, 2, w]`.
    pub hands: Tensor,
    /// `[B, 3T]`, 1 on slots the encoder attends to.
    pub visible: Tensor,
    /// `[B, T, 2, w]` when every window carries a target.
    pub target: Option<Tensor>,
}

impl TokenBatch {
    pub fn from_prepared(windows: &[&PreparedWindow], frames: usize, hand_width: usize) -> Result<Self> {
        let b = windows.len();
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let cat = |f: &dyn Fn(&PreparedWindow) -> &[f32]| -> Vec<f32> { windows.iter().flat_map(|w| f(w).iter().copied()).collect() };
        let dev = device();
        let head = Tensor::from_vec(cat(&|w| &w.head), (b, frames, HEAD_DIM), &dev)?;
        let hands = Tensor::from_vec(cat(&|w| &w.hands), (b, frames, 2, hand_width), &dev)?;
        let visible = Tensor::from_vec(cat(&|w| &w.visible), (b, SLOTS_PER_FRAME * frames), &dev)?;
        let target = if windows.iter().all(|w| w.target.is_some()) {
            let y: Vec<f32> = windows.iter().flat_map(|w| w.target.as_ref().unwrap().iter().copied()).collect();
            Some(Tensor::from_vec(y, (b, frames, 2, hand_width), &dev)?)
        } else {
            None
        };
        Ok(Self {
            batch: b,
            frames,
            hand_width,
            head,
            hands,
            visible,
            target,
        })
    }
}

/// Tokenizes windows whose length must equal the layout's.
pub fn tokenize_inputs(inputs: &[ImputerInput], norm: &FeatureNormalizer, layout: &TokenLayout) -> Result<TokenBatch> {
    let prepared = inputs
        .iter()
        .map(|x| {
            if x.frames() != layout.frames {
                return Err(Error::Shape(format!("window has {} frames, layout expects {}", x.frames(), layout.frames)));
            }
            PreparedWindow::new(x, None, norm)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PreparedWindow> = prepared.iter().collect();
    TokenBatch::from_prepared(&refs, layout.frames, layout.hand_width)
}
