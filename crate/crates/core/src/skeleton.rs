use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Hand,
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Bone vector in the parent frame, meters.
    pub offset: [f64; 3],
    pub region: Region,
}

/// Kinematic tree in topological order (every parent precedes its children).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    head: Option<usize>,
    wrists: Option<[usize; 2]>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, head: Option<usize>, wrists: Option<[usize; 2]>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::Skeleton(format!(
                "expected exactly one root at index 0, found {roots} roots"
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::Skeleton(format!(
                        "joint {i} ({}) has parent {p}, which does not precede it",
                        j.name
                    )));
                }
            }
            if j.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::Skeleton(format!("joint {i} has a non-finite offset")));
            }
        }
        let n = joints.len();
        let in_range = |i: usize| i < n;
        if head.is_some_and(|h| !in_range(h)) || wrists.is_some_and(|w| !w.iter().all(|&i| in_range(i))) {
            return Err(Error::Skeleton("designated joint out of range".into()));
        }
        Ok(Self {
            joints,
            head,
            wrists,
        })
    }

    /// A 22-joint humanoid with SMPL-like topology. Y is up, the body faces +Z,
    /// arms hang down in the rest pose, and the pelvis root sits at the origin
    /// of its local frame (the generator places it about 0.95 m above ground).
    pub fn humanoid() -> Self {
        const SPEC: [(&str, Option<usize>, [f64; 3]); 22] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("left_hip", Some(0), [0.09, -0.08, 0.0]),
            ("right_hip", Some(0), [-0.09, -0.08, 0.0]),
            ("spine1", Some(0), [0.0, 0.11, 0.0]),
            ("left_knee", Some(1), [0.0, -0.40, 0.0]),
            ("right_knee", Some(2), [0.0, -0.40, 0.0]),
            ("spine2", Some(3), [0.0, 0.13, 0.0]),
            ("left_ankle", Some(4), [0.0, -0.40, 0.0]),
            ("right_ankle", Some(5), [0.0, -0.40, 0.0]),
            ("spine3", Some(6), [0.0, 0.06, 0.0]),
            ("left_foot", Some(7), [0.0, -0.05, 0.12]),
            ("right_foot", Some(8), [0.0, -0.05, 0.12]),
            ("neck", Some(9), [0.0, 0.21, 0.0]),
            ("left_collar", Some(9), [0.07, 0.12, 0.0]),
            ("right_collar", Some(9), [-0.07, 0.12, 0.0]),
            ("head", Some(12), [0.0, 0.12, 0.02]),
            ("left_shoulder", Some(13), [0.10, 0.03, 0.0]),
            ("right_shoulder", Some(14), [-0.10, 0.03, 0.0]),
            ("left_elbow", Some(16), [0.0, -0.27, 0.0]),
            ("right_elbow", Some(17), [0.0, -0.27, 0.0]),
            ("left_wrist", Some(18), [0.0, -0.25, 0.0]),
            ("right_wrist", Some(19), [0.0, -0.25, 0.0]),
        ];
        let joints = SPEC
            .iter()
            .map(|&(name, parent, offset)| Joint {
                name: name.to_string(),
                parent,
                offset,
                region: Region::Lower,
            })
            .collect();
        let mut skel = Self::new(joints, Some(15), Some([20, 21])).expect("static humanoid is valid");
        skel.assign_regions();
        skel
    }

    /// A straight chain of `n` joints, each offset by `offset` from its parent.
    pub fn chain(n: usize, offset: [f64; 3]) -> Result<Self> {
        let joints = (0..n)
            .map(|i| Joint {
                name: format!("j{i}"),
                parent: i.checked_sub(1),
                offset: if i == 0 { [0.0; 3] } else { offset },
                region: Region::Upper,
            })
            .collect();
        Self::new(joints, None, None)
    }

    /// Wrists become hand joints; joints strictly above the root in the rest
    /// pose become upper body; everything else is lower body.
    pub fn assign_regions(&mut self) {
        let mut rest_height = vec![0.0; self.joints.len()];
        for i in 0..self.joints.len() {
            if let Some(p) = self.joints[i].parent {
                rest_height[i] = rest_height[p] + self.joints[i].offset[1];
            }
        }
        let wrists = self.wrists;
        for (i, j) in self.joints.iter_mut().enumerate() {
            j.region = if wrists.is_some_and(|w| w.contains(&i)) {
                Region::Hand
            } else if rest_height[i] > 1e-9 {
                Region::Upper
            } else {
                Region::Lower
            };
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    pub fn head(&self) -> Option<usize> {
        self.head
    }

    /// `[left, right]` wrist joint indices.
    pub fn wrists(&self) -> Option<[usize; 2]> {
        self.wrists
    }

    pub fn joints_in(&self, region: Region) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.region == region)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn humanoid_regions() {
        let s = Skeleton::humanoid();
        assert_eq!(s.joint_count(), 22);
        assert_eq!(s.joints_in(Region::Hand), vec![20, 21]);
        let lower = s.joints_in(Region::Lower);
        for name in ["pelvis", "left_hip", "right_knee", "left_foot"] {
            assert!(lower.contains(&s.index_of(name).unwrap()), "{name}");
        }
        let upper = s.joints_in(Region::Upper);
        for name in ["spine1", "head", "left_elbow", "right_shoulder"] {
            assert!(upper.contains(&s.index_of(name).unwrap()), "{name}");
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let mut joints = Skeleton::humanoid().joints().to_vec();
        joints[3].parent = Some(5);
        assert!(matches!(Skeleton::new(joints, None, None), Err(Error::Skeleton(_))));

        let mut joints = Skeleton::humanoid().joints().to_vec();
        joints[4].parent = None;
        assert!(Skeleton::new(joints, None, None).is_err());

        let mut joints = Skeleton::humanoid().joints().to_vec();
        joints[2].offset[0] = f64::INFINITY;
        assert!(Skeleton::new(joints, None, None).is_err());
    }
}
