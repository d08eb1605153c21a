use nalgebra::{Matrix3, Vector3};

pub const HAND_JOINTS: usize = 21;

/// Root-relative 21-joint hand: index 0 is the wrist, then four joints per
/// finger (thumb first). `curl` in radians bends every finger toward the palm.
pub fn hand_template(curl: f64) -> Vec<Vector3<f64>> {
    // (base offset from wrist, segment lengths, spread angle)
    const FINGERS: [([f64; 3], [f64; 4], f64); 5] = [
        ([0.025, 0.02, 0.01], [0.035, 0.03, 0.025, 0.02], 0.9),
        ([0.025, 0.09, 0.0], [0.0, 0.04, 0.025, 0.02], 0.15),
        ([0.005, 0.095, 0.0], [0.0, 0.045, 0.028, 0.022], 0.0),
        ([-0.012, 0.09, 0.0], [0.0, 0.042, 0.026, 0.02], -0.12),
        ([-0.028, 0.08, 0.0], [0.0, 0.032, 0.02, 0.018], -0.25),
    ];
    let mut joints = vec![Vector3::zeros()];
    for (base, lengths, spread) in FINGERS {
        let mut p = Vector3::from(base);
        let mut bend = 0.0;
        for (k, len) in lengths.iter().enumerate() {
            if k > 0 {
                bend += curl;
            }
            let dir = Vector3::new(spread.sin() * bend.cos(), spread.cos() * bend.cos(), -bend.sin());
            p += dir * *len;
            joints.push(p);
        }
    }
    debug_assert_eq!(joints.len(), HAND_JOINTS);
    joints
}

pub fn posed_hand(rotation: &Matrix3<f64>, curl: f64) -> Vec<Vector3<f64>> {
    hand_template(curl).into_iter().map(|p| rotation * p).collect()
}
