use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::camera::PinholeCamera;
use super::solver::solve_wrist_offset;
use crate::error::{Error, Result};
use crate::synth::tracking::{HandDim, HandSide, TrackingSignal};
use crate::synth::visibility::VisibilityMask;

/// Detector noise per axis, meters. The mean 3D error of isotropic noise is
/// `σ·2√(2/π) ≈ 1.596σ`, about 9.6 cm here.
pub const DEFAULT_NOISE_SIGMA_M: f64 = 0.06;

/// One hand seen through the egocentric camera.
#[derive(Clone, Debug, PartialEq)]
pub struct HandObservation {
    pub frame: usize,
    pub side: HandSide,
    /// Root-relative 3D joints.
    pub local_joints: Vec<Vector3<f64>>,
    pub image_joints: Vec<Vector2<f64>>,
    /// `local_joints + offset` in the camera frame.
    pub camera_joints: Vec<Vector3<f64>>,
    pub offset: Vector3<f64>,
    pub valid: bool,
}

impl HandObservation {
    /// Lifts 2D detections to the camera frame using the root-relative 3D hand.
    /// Solver failures produce an invalid observation rather than an error.
    pub fn lift(
        cam: &PinholeCamera,
        frame: usize,
        side: HandSide,
        local_joints: Vec<Vector3<f64>>,
        image_joints: Vec<Vector2<f64>>,
        init_depth: f64,
    ) -> Self {
        let (offset, valid) = match solve_wrist_offset(cam, &local_joints, &image_joints, init_depth) {
            Ok(sol) => (sol.offset, true),
            Err(_) => (Vector3::zeros(), false),
        };
        let camera_joints = local_joints.iter().map(|p| p + offset).collect();
        Self {
            frame,
            side,
            local_joints,
            image_joints,
            camera_joints,
            offset,
            valid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandDetection {
    pub frame: usize,
    pub side: HandSide,
    pub state: Vec<f64>,
}

/// Sparse, frame-indexed hand states.
#[derive(Clone, Debug, PartialEq)]
pub struct HandDetections {
    pub frames: usize,
    pub hand_dim: HandDim,
    pub entries: Vec<HandDetection>,
}

impl HandDetections {
    pub fn empty(frames: usize, hand_dim: HandDim) -> Self {
        Self {
            frames,
            hand_dim,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per `(frame, side)` lookup table.
    pub fn lookup(&self) -> Vec<[Option<&[f64]>; 2]> {
        let mut table = vec![[None, None]; self.frames];
        for e in &self.entries {
            table[e.frame][e.side.index()] = Some(e.state.as_slice());
        }
        table
    }

    pub fn mask(&self) -> VisibilityMask {
        let mut m = VisibilityMask::all(self.frames, false);
        for e in &self.entries {
            m.visible[e.frame][e.side.index()] = true;
        }
        m
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|e| e.frame >= start && e.frame < start + len)
            .map(|e| HandDetection {
                frame: e.frame - start,
                ..e.clone()
            })
            .collect();
        Self {
            frames: len,
            hand_dim: self.hand_dim,
            entries,
        }
    }

    /// Detections taken verbatim from dense states wherever the mask is set.
    pub fn from_dense(signal: &TrackingSignal, mask: &VisibilityMask) -> Result<Self> {
        simulate_with(signal, mask, |_| 0.0)
    }
}

/// Emits ground-truth wrist states perturbed by isotropic Gaussian noise on
/// visible frames only. Rotation components pass through unperturbed.
pub fn simulate_detections<R: Rng>(
    signal: &TrackingSignal,
    mask: &VisibilityMask,
    noise_sigma_m: f64,
    rng: &mut R,
) -> Result<HandDetections> {
    if !(noise_sigma_m >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be non-negative, got {noise_sigma_m}")));
    }
    let normal = Normal::new(0.0, noise_sigma_m).expect("non-negative sigma");
    simulate_with(signal, mask, |_| if noise_sigma_m > 0.0 { normal.sample(rng) } else { 0.0 })
}

fn simulate_with(
    signal: &TrackingSignal,
    mask: &VisibilityMask,
    mut noise: impl FnMut(usize) -> f64,
) -> Result<HandDetections> {
    let frames = signal.frames();
    if mask.frames() != frames {
        return Err(Error::Shape(format!(
            "mask has {} frames, signal has {frames}",
            mask.frames()
        )));
    }
    let mut entries = Vec::with_capacity(mask.visible_count());
    for (t, vis) in mask.visible.iter().enumerate() {
        for side in HandSide::BOTH {
            if !vis[side.index()] {
                continue;
            }
            let mut state = signal.hand(t, side).to_vec();
            for (axis, v) in state.iter_mut().take(3).enumerate() {
                *v += noise(axis);
            }
            entries.push(HandDetection { frame: t, side, state });
        }
    }
    Ok(HandDetections {
        frames,
        hand_dim: signal.hand_dim,
        entries,
    })
}
