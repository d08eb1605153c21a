use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotation::{rot6d_to_matrix, Rot6d};
use crate::skeleton::Skeleton;

pub const DEFAULT_FPS: f64 = 30.0;

/// Root translation plus one local (parent-relative) rotation per joint.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root: Vector3<f64>,
    pub rotations: Vec<Rot6d>,
}

impl Pose {
    pub fn rest(joint_count: usize) -> Self {
        Self {
            root: Vector3::zeros(),
            rotations: vec![crate::rotation::IDENTITY_6D; joint_count],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    pub frames: Vec<Pose>,
    pub skeleton: Arc<Skeleton>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Vec<Pose>, skeleton: Arc<Skeleton>) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        let j = skeleton.joint_count();
        if let Some((t, _)) = frames.iter().enumerate().find(|(_, p)| p.rotations.len() != j) {
            return Err(Error::Shape(format!(
                "frame {t} has {} rotations, skeleton has {j} joints",
                frames[t].rotations.len()
            )));
        }
        Ok(Self {
            fps,
            frames,
            skeleton,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// World joint positions for every frame.
    pub fn joint_positions(&self) -> Result<Vec<Vec<Vector3<f64>>>> {
        self.frames
            .iter()
            .map(|p| forward_kinematics(&self.skeleton, p))
            .collect()
    }

    /// Frames `[start, start + len)` as a new sequence sharing the skeleton.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Shape(format!(
                "window [{start}, {}) exceeds sequence length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            fps: self.fps,
            frames: self.frames[start..start + len].to_vec(),
            skeleton: Arc::clone(&self.skeleton),
        })
    }
}

/// World positions and world rotations of every joint.
pub struct WorldPose {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
}

pub fn forward_kinematics_full(skeleton: &Skeleton, pose: &Pose) -> Result<WorldPose> {
    let n = skeleton.joint_count();
    if pose.rotations.len() != n {
        return Err(Error::Shape(format!(
            "pose has {} rotations, skeleton has {n} joints",
            pose.rotations.len()
        )));
    }
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let local = rot6d_to_matrix(&pose.rotations[i])?;
        match joint.parent {
            None => {
                positions.push(pose.root);
                rotations.push(local);
            }
            Some(p) => {
                let offset = Vector3::from(joint.offset);
                positions.push(positions[p] + rotations[p] * offset);
                rotations.push(rotations[p] * local);
            }
        }
    }
    Ok(WorldPose {
        positions,
        rotations,
    })
}

pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    forward_kinematics_full(skeleton, pose).map(|w| w.positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{euler_to_matrix, matrix_to_rot6d};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_chain_accumulates_offsets() {
        let skel = Skeleton::chain(5, [0.0, 0.1, 0.0]).unwrap();
        let pos = forward_kinematics(&skel, &Pose::rest(5)).unwrap();
        for (k, p) in pos.iter().enumerate() {
            assert_abs_diff_eq!(*p, Vector3::new(0.0, 0.1 * k as f64, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn parent_rotation_rotates_child_offset() {
        let skel = Skeleton::chain(2, [0.1, 0.0, 0.0]).unwrap();
        let mut pose = Pose::rest(2);
        pose.root = Vector3::new(1.0, 2.0, 3.0);
        pose.rotations[0] = matrix_to_rot6d(&euler_to_matrix(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let pos = forward_kinematics(&skel, &pose).unwrap();
        assert_abs_diff_eq!(pos[0], pose.root, epsilon = 1e-15);
        assert_abs_diff_eq!(pos[1], pose.root + Vector3::new(0.0, 0.1, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn joint_count_mismatch_is_a_shape_error() {
        let skel = Skeleton::chain(3, [0.0, 0.1, 0.0]).unwrap();
        assert!(matches!(
            forward_kinematics(&skel, &Pose::rest(2)),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn translation_equivariance(
            v in prop::array::uniform3(-5.0f64..5.0),
            angles in prop::collection::vec(prop::array::uniform3(-1.5f64..1.5), 22),
        ) {
            let skel = Skeleton::humanoid();
            let rotations = angles.iter().map(|a| matrix_to_rot6d(&euler_to_matrix(a[0], a[1], a[2]))).collect();
            let pose = Pose { root: Vector3::zeros(), rotations };
            let mut moved = pose.clone();
            moved.root += Vector3::from(v);
            let a = forward_kinematics(&skel, &pose).unwrap();
            let b = forward_kinematics(&skel, &moved).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                prop_assert!((pa + Vector3::from(v) - pb).norm() < 1e-12);
            }
        }
    }
}
