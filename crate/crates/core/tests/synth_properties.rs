use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use sparsepose_core::motion::{forward_kinematics_full, MotionSequence, Pose};
use sparsepose_core::rotation::{matrix_to_rot6d, rot6d_to_matrix};
use sparsepose_core::synth::generator::{generate_motion, GeneratorConfig};
use sparsepose_core::synth::tracking::{derive_tracking_signal, head_layout, HandDim};
use sparsepose_core::synth::visibility::{compute_visibility, VisibilityConfig};

/// Brute-force visibility: explicit dot product against the cosine of the half angle.
fn oracle_visible(forward: Vector3<f64>, head: Vector3<f64>, wrist: Vector3<f64>, half_deg: f64) -> bool {
    let d = wrist - head;
    if d.norm() < 1e-12 {
        return false;
    }
    let cos = forward.dot(&d) / (forward.norm() * d.norm());
    cos >= half_deg.to_radians().cos() - 1e-12
}

#[test]
fn visibility_ratio_over_ten_thousand_frames() {
    let cfg = GeneratorConfig::default();
    let (mut any, mut total) = (0usize, 0usize);
    let mut seed = 0;
    while total < 10_000 {
        let seq = generate_motion(&cfg, seed).unwrap();
        let mask = compute_visibility(&seq, &VisibilityConfig::default()).unwrap();
        any += mask.visible.iter().filter(|v| v[0] || v[1]).count();
        total += mask.frames();
        seed += 1;
    }
    let ratio = any as f64 / total as f64;
    assert!((0.10..=0.35).contains(&ratio), "visibility ratio {ratio}");
}

#[test]
fn visibility_matches_brute_force_oracle() {
    let cfg = GeneratorConfig::default();
    for seed in 0..12 {
        let seq = generate_motion(&cfg, seed).unwrap();
        let mask = compute_visibility(&seq, &VisibilityConfig::default()).unwrap();
        let skel = &seq.skeleton;
        let (head, wrists) = (skel.head().unwrap(), skel.wrists().unwrap());
        for (t, pose) in seq.frames.iter().enumerate() {
            let w = forward_kinematics_full(skel, pose).unwrap();
            let fwd = w.rotations[head] * Vector3::z();
            for side in 0..2 {
                let expected = oracle_visible(fwd, w.positions[head], w.positions[wrists[side]], 45.0);
                assert_eq!(mask.visible[t][side], expected, "seed {seed} frame {t} side {side}");
            }
        }
    }
}

#[test]
fn generated_motion_is_smooth() {
    // Mean per-joint displacement between consecutive frames, cm.
    const MAX_STEP_CM: f64 = 8.0;
    let cfg = GeneratorConfig::default();
    for seed in 0..20 {
        let seq = generate_motion(&cfg, seed).unwrap();
        let positions = seq.joint_positions().unwrap();
        for (t, pair) in positions.windows(2).enumerate() {
            let step_cm = pair[0].iter().zip(&pair[1]).map(|(a, b)| (a - b).norm()).sum::<f64>()
                / pair[0].len() as f64
                * 100.0;
            assert!(step_cm < MAX_STEP_CM, "seed {seed} frame {t}: {step_cm} cm");
        }
    }
}

fn rigidly_moved(seq: &MotionSequence, rot: &Rotation3<f64>, shift: Vector3<f64>) -> MotionSequence {
    let frames = seq
        .frames
        .iter()
        .map(|p| {
            let mut rotations = p.rotations.clone();
            rotations[0] = matrix_to_rot6d(&(rot.matrix() * rot6d_to_matrix(&p.rotations[0]).unwrap()));
            Pose {
                root: rot * p.root + shift,
                rotations,
            }
        })
        .collect();
    MotionSequence::new(seq.fps, frames, Arc::clone(&seq.skeleton)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn visibility_is_rigid_invariant(
        seed in 0u64..500,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let mut cfg = GeneratorConfig::default();
        cfg.frames = 30;
        let seq = generate_motion(&cfg, seed).unwrap();
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let moved = rigidly_moved(&seq, &rot, Vector3::from(shift));
        let a = compute_visibility(&seq, &VisibilityConfig::default()).unwrap();
        let b = compute_visibility(&moved, &VisibilityConfig::default()).unwrap();
        // Rounding can flip a hand sitting on the cone boundary; require agreement
        // wherever the angle is not within 1e-6 degrees of 45.
        let skel = &seq.skeleton;
        let (head, wrists) = (skel.head().unwrap(), skel.wrists().unwrap());
        for (t, pose) in seq.frames.iter().enumerate() {
            let w = forward_kinematics_full(skel, pose).unwrap();
            let fwd = w.rotations[head] * Vector3::z();
            for side in 0..2 {
                let d = w.positions[wrists[side]] - w.positions[head];
                let ang = (fwd.dot(&d) / d.norm()).clamp(-1.0, 1.0).acos().to_degrees();
                if (ang - 45.0).abs() > 1e-6 {
                    prop_assert_eq!(a.visible[t][side], b.visible[t][side]);
                }
            }
        }
    }

    #[test]
    fn head_deltas_integrate_back(seed in 0u64..1000) {
        let mut cfg = GeneratorConfig::default();
        cfg.frames = 60;
        let seq = generate_motion(&cfg, seed).unwrap();
        let sig = derive_tracking_signal(&seq, HandDim::PositionRotation).unwrap();
        let p0 = sig.head_frame(0)[head_layout::POSITION].to_vec();
        let o0 = sig.head_frame(0)[head_layout::ORIENTATION].to_vec();
        let mut pos = p0.clone();
        let mut orient = o0.clone();
        for t in 0..sig.frames() {
            let f = sig.head_frame(t);
            for i in 0..3 {
                pos[i] += f[head_layout::POSITION_DELTA][i];
            }
            for i in 0..6 {
                orient[i] += f[head_layout::ORIENTATION_DELTA][i];
            }
            for i in 0..3 {
                prop_assert!((pos[i] - f[head_layout::POSITION][i]).abs() < 1e-9);
            }
            for i in 0..6 {
                prop_assert!((orient[i] - f[head_layout::ORIENTATION][i]).abs() < 1e-9);
            }
        }
    }
}
