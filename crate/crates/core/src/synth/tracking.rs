use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{forward_kinematics_full, MotionSequence};
use crate::rotation::matrix_to_rot6d;

/// Head feature width: 6D orientation, 6D orientation delta, position, position delta.
pub const HEAD_DIM: usize = 18;

pub mod head_layout {
    use std::ops::Range;
    pub const ORIENTATION: Range<usize> = 0..6;
    pub const ORIENTATION_DELTA: Range<usize> = 6..12;
    pub const POSITION: Range<usize> = 12..15;
    pub const POSITION_DELTA: Range<usize> = 15..18;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandDim {
    /// Wrist position only.
    Position,
    /// Wrist position followed by the wrist's world rotation in 6D.
    PositionRotation,
}

impl HandDim {
    pub fn width(self) -> usize {
        match self {
            HandDim::Position => 3,
            HandDim::PositionRotation => 9,
        }
    }

    pub fn from_width(width: usize) -> Result<Self> {
        match width {
            3 => Ok(HandDim::Position),
            9 => Ok(HandDim::PositionRotation),
            other => Err(Error::Config(format!("hand state width must be 3 or 9, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub const BOTH: [HandSide; 2] = [HandSide::Left, HandSide::Right];

    pub fn index(self) -> usize {
        match self {
            HandSide::Left => 0,
            HandSide::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            HandSide::Left
        } else {
            HandSide::Right
        }
    }
}

/// Dense per-frame head features and ground-truth hand states.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingSignal {
    pub fps: f64,
    pub hand_dim: HandDim,
    /// `frames × HEAD_DIM`, row-major.
    pub head: Vec<f64>,
    /// `frames × 2 × hand_width`, row-major, left hand first.
    pub hands: Vec<f64>,
}

impl TrackingSignal {
    pub fn frames(&self) -> usize {
        self.head.len() / HEAD_DIM
    }

    pub fn head_frame(&self, t: usize) -> &[f64] {
        &self.head[t * HEAD_DIM..(t + 1) * HEAD_DIM]
    }

    pub fn hand(&self, t: usize, side: HandSide) -> &[f64] {
        let w = self.hand_dim.width();
        let start = (t * 2 + side.index()) * w;
        &self.hands[start..start + w]
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::Shape(format!(
                "window [{start}, {}) exceeds {} frames",
                start + len,
                self.frames()
            )));
        }
        let w = self.hand_dim.width();
        Ok(Self {
            fps: self.fps,
            hand_dim: self.hand_dim,
            head: self.head[start * HEAD_DIM..(start + len) * HEAD_DIM].to_vec(),
            hands: self.hands[start * 2 * w..(start + len) * 2 * w].to_vec(),
        })
    }
}

pub fn derive_tracking_signal(seq: &MotionSequence, hand_dim: HandDim) -> Result<TrackingSignal> {
    let skel = &seq.skeleton;
    let head = skel
        .head()
        .ok_or_else(|| Error::Config("skeleton has no designated head joint".into()))?;
    let wrists = skel
        .wrists()
        .ok_or_else(|| Error::Config("skeleton has no designated wrist joints".into()))?;

    let frames = seq.len();
    let mut head_feat = Vec::with_capacity(frames * HEAD_DIM);
    let mut hands = Vec::with_capacity(frames * 2 * hand_dim.width());
    let mut prev: Option<([f64; 6], [f64; 3])> = None;
    for pose in &seq.frames {
        let world = forward_kinematics_full(skel, pose)?;
        let orient = matrix_to_rot6d(&world.rotations[head]);
        let pos = world.positions[head];
        let pos = [pos.x, pos.y, pos.z];
        let (d_orient, d_pos) = match prev {
            None => ([0.0; 6], [0.0; 3]),
            Some((po, pp)) => (
                std::array::from_fn(|i| orient[i] - po[i]),
                std::array::from_fn(|i| pos[i] - pp[i]),
            ),
        };
        head_feat.extend_from_slice(&orient);
        head_feat.extend_from_slice(&d_orient);
        head_feat.extend_from_slice(&pos);
        head_feat.extend_from_slice(&d_pos);
        prev = Some((orient, pos));

        for &w in &wrists {
            let p = world.positions[w];
            hands.extend_from_slice(&[p.x, p.y, p.z]);
            if hand_dim == HandDim::PositionRotation {
                hands.extend_from_slice(&matrix_to_rot6d(&world.rotations[w]));
            }
        }
    }
    Ok(TrackingSignal {
        fps: seq.fps,
        hand_dim,
        head: head_feat,
        hands,
    })
}
