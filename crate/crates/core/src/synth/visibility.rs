//! Field-of-view visibility: a hand is visible when the head-to-wrist direction
//! lies within a cone around the head's forward axis.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{forward_kinematics_full, MotionSequence};

/// Slack on the inclusive boundary, degrees. Makes the exact-boundary case
/// deterministic despite `acos` rounding.
pub const BOUNDARY_EPS_DEG: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardAxis {
    PlusZ,
    MinusZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityConfig {
    pub half_angle_deg: f64,
    pub forward_axis: ForwardAxis,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            half_angle_deg: 45.0,
            forward_axis: ForwardAxis::PlusZ,
        }
    }
}

/// Per-frame `[left, right]` visibility.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisibilityMask {
    pub visible: Vec<[bool; 2]>,
}

impl VisibilityMask {
    pub fn all(frames: usize, value: bool) -> Self {
        Self {
            visible: vec![[value; 2]; frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.visible.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().flatten().filter(|&&v| v).count()
    }

    /// Fraction of frames where at least one hand is visible.
    pub fn any_visible_ratio(&self) -> f64 {
        if self.visible.is_empty() {
            return 0.0;
        }
        self.visible.iter().filter(|v| v[0] || v[1]).count() as f64 / self.visible.len() as f64
    }

    /// Frame counts with 0, 1 and 2 hands visible.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for v in &self.visible {
            h[v[0] as usize + v[1] as usize] += 1;
        }
        h
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        Self {
            visible: self.visible[start..start + len].to_vec(),
        }
    }
}

/// Angle in degrees between `forward` and the direction from `head` to
/// `target`; `None` if the two points coincide.
pub fn view_angle_deg(forward: &Vector3<f64>, head: &Vector3<f64>, target: &Vector3<f64>) -> Option<f64> {
    let dir = target - head;
    let n = dir.norm();
    if n < 1e-12 {
        return None;
    }
    let cos = (forward.dot(&dir) / (forward.norm() * n)).clamp(-1.0, 1.0);
    Some(cos.acos().to_degrees())
}

pub fn is_visible(angle_deg: Option<f64>, half_angle_deg: f64) -> bool {
    angle_deg.is_some_and(|a| a <= half_angle_deg + BOUNDARY_EPS_DEG)
}

pub fn compute_visibility(seq: &MotionSequence, cfg: &VisibilityConfig) -> Result<VisibilityMask> {
    if !(cfg.half_angle_deg > 0.0 && cfg.half_angle_deg < 180.0) {
        return Err(Error::Config(format!(
            "half angle must lie in (0, 180), got {}",
            cfg.half_angle_deg
        )));
    }
    let skel = &seq.skeleton;
    let head = skel
        .head()
        .ok_or_else(|| Error::Config("skeleton has no designated head joint".into()))?;
    let wrists = skel
        .wrists()
        .ok_or_else(|| Error::Config("skeleton has no designated wrist joints".into()))?;
    let sign = match cfg.forward_axis {
        ForwardAxis::PlusZ => 1.0,
        ForwardAxis::MinusZ => -1.0,
    };
    let visible = seq
        .frames
        .iter()
        .map(|pose| {
            let world = forward_kinematics_full(skel, pose)?;
            let forward: Vector3<f64> = world.rotations[head].column(2) * sign;
            let hp = world.positions[head];
            Ok(wrists.map(|w| is_visible(view_angle_deg(&forward, &hp, &world.positions[w]), cfg.half_angle_deg)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VisibilityMask { visible })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visible_at(target: [f64; 3]) -> bool {
        let fwd = Vector3::new(0.0, 0.0, 1.0);
        is_visible(view_angle_deg(&fwd, &Vector3::zeros(), &Vector3::from(target)), 45.0)
    }

    #[test]
    fn cone_boundaries() {
        assert!(visible_at([0.0, 0.0, 1.0]));
        assert!(!visible_at([0.0, 0.0, -1.0]));
        // arccos(1/√2) = 45° exactly: inclusive.
        assert!(visible_at([1.0, 0.0, 1.0]));
        assert!(visible_at([0.0, -1.0, 1.0]));
        assert!(!visible_at([1.01, 0.0, 1.0]));
        assert!(!visible_at([0.0, 0.0, 0.0]));
    }

    #[test]
    fn histogram_and_ratio() {
        let m = VisibilityMask {
            visible: vec![[false, false], [true, false], [true, true], [false, false]],
        };
        assert_eq!(m.histogram(), [2, 1, 1]);
        assert_eq!(m.any_visible_ratio(), 0.5);
        assert_eq!(m.visible_count(), 3);
        assert_eq!(VisibilityMask::all(3, false).histogram(), [3, 0, 0]);
    }
}
