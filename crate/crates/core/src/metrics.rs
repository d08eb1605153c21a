//! Position, velocity and rotation errors between two motion sequences.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rotation::{geodesic_angle, rot6d_to_matrix};
use crate::skeleton::{Region, Skeleton};

const M_TO_CM: f64 = 100.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub mpjpe_cm: f64,
    pub mpjve_cm_s: f64,
    pub mpjre_deg: f64,
    /// `None` when the skeleton has no joints in the region.
    pub hand_pe_cm: Option<f64>,
    pub upper_pe_cm: Option<f64>,
    pub lower_pe_cm: Option<f64>,
}

/// Precomputed per-frame world positions and local rotation matrices.
pub struct MotionSamples<'a> {
    pub positions: &'a [Vec<Vector3<f64>>],
    pub local_rotations: &'a [Vec<Matrix3<f64>>],
}

pub fn compute_metrics(pred: &MotionSequence, gt: &MotionSequence) -> Result<MetricRecord> {
    if pred.skeleton != gt.skeleton {
        return Err(Error::Shape("sequences use different skeletons".into()));
    }
    if pred.fps != gt.fps {
        return Err(Error::Shape(format!("fps differs: {} vs {}", pred.fps, gt.fps)));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("length differs: {} vs {}", pred.len(), gt.len())));
    }
    let (pp, pr) = samples_of(pred)?;
    let (gp, gr) = samples_of(gt)?;
    compute_metrics_from_samples(
        &gt.skeleton,
        gt.fps,
        &MotionSamples { positions: &pp, local_rotations: &pr },
        &MotionSamples { positions: &gp, local_rotations: &gr },
    )
}

pub fn samples_of(seq: &MotionSequence) -> Result<(Vec<Vec<Vector3<f64>>>, Vec<Vec<Matrix3<f64>>>)> {
    let positions = seq.joint_positions()?;
    let rotations = seq
        .frames
        .iter()
        .map(|p| p.rotations.iter().map(rot6d_to_matrix).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((positions, rotations))
}

/// Metrics over explicit samples, for predictions whose positions were
/// averaged independently of their rotations.
pub fn compute_metrics_from_samples(
    skeleton: &Skeleton,
    fps: f64,
    pred: &MotionSamples<'_>,
    gt: &MotionSamples<'_>,
) -> Result<MetricRecord> {
    let frames = gt.positions.len();
    let joints = skeleton.joint_count();
    let frames_ok = pred.positions.len() == frames
        && pred.local_rotations.len() == frames
        && gt.local_rotations.len() == frames;
    let joints_ok = pred.positions.iter().chain(gt.positions).all(|f| f.len() == joints)
        && pred.local_rotations.iter().chain(gt.local_rotations).all(|f| f.len() == joints);
    if !frames_ok || !joints_ok {
        return Err(Error::Shape("prediction and ground truth are misaligned".into()));
    }
    if frames < 2 {
        return Err(Error::TooShortForVelocity(frames));
    }

    let mean_distance = |ids: &[usize]| -> Option<f64> {
        if ids.is_empty() {
            return None;
        }
        let total: f64 = (0..frames)
            .map(|t| ids.iter().map(|&j| (pred.positions[t][j] - gt.positions[t][j]).norm()).sum::<f64>())
            .sum();
        Some(total / (frames * ids.len()) as f64 * M_TO_CM)
    };
    let all: Vec<usize> = (0..joints).collect();
    let mpjpe_cm = mean_distance(&all).unwrap_or(0.0);

    let mut vel_err = 0.0;
    for t in 0..frames - 1 {
        for j in 0..joints {
            let vp = (pred.positions[t + 1][j] - pred.positions[t][j]) * fps;
            let vg = (gt.positions[t + 1][j] - gt.positions[t][j]) * fps;
            vel_err += (vp - vg).norm();
        }
    }
    let mpjve_cm_s = vel_err / ((frames - 1) * joints) as f64 * M_TO_CM;

    let mut rot_err = 0.0;
    for t in 0..frames {
        for j in 0..joints {
            rot_err += geodesic_angle(&pred.local_rotations[t][j], &gt.local_rotations[t][j]);
        }
    }
    let mpjre_deg = (rot_err / (frames * joints) as f64).to_degrees();

    Ok(MetricRecord {
        mpjpe_cm,
        mpjve_cm_s,
        mpjre_deg,
        hand_pe_cm: mean_distance(&skeleton.joints_in(Region::Hand)),
        upper_pe_cm: mean_distance(&skeleton.joints_in(Region::Upper)),
        lower_pe_cm: mean_distance(&skeleton.joints_in(Region::Lower)),
    })
}
