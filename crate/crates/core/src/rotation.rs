//! 6D rotation representation and rotation-matrix utilities.
//!
//! A 6D rotation is the first two columns of a rotation matrix laid out as
//! `[c1.x, c1.y, c1.z, c2.x, c2.y, c2.z]`. Recovery orthonormalizes the two
//! columns with Gram-Schmidt and completes the frame with a cross product.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Rot6d = [f64; 6];

pub const IDENTITY_6D: Rot6d = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const MIN_NORM: f64 = 1e-8;

pub fn rot6d_to_matrix(r6: &Rot6d) -> Result<Matrix3<f64>> {
    if r6.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite component"));
    }
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    let n2 = a2.norm();
    if n1 <= MIN_NORM || n2 <= MIN_NORM {
        return Err(Error::DegenerateRotation("zero-norm column"));
    }
    let b1 = a1 / n1;
    let ortho = a2 - b1 * b1.dot(&a2);
    let no = ortho.norm();
    if no <= MIN_NORM * n2 {
        return Err(Error::DegenerateRotation("parallel columns"));
    }
    let b2 = ortho / no;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Rot6d {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Orthonormalizes an arbitrary 6-vector, e.g. a network output. Returns the
/// identity encoding when the input is degenerate.
pub fn sanitize_rot6d(r6: &Rot6d) -> Rot6d {
    rot6d_to_matrix(r6)
        .map(|m| matrix_to_rot6d(&m))
        .unwrap_or(IDENTITY_6D)
}

/// Geodesic distance in radians. Equal to `arccos((tr(AᵀB) - 1) / 2)` for
/// rotations, evaluated from `‖A−B‖² = 8 sin²(θ/2)` and `‖A+B‖² = 4 + 8 cos²(θ/2)`
/// so it is exact at zero and well conditioned at both ends.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let half_cos = ((a + b).norm_squared() - 4.0).max(0.0).sqrt();
    2.0 * (a - b).norm().atan2(half_cos)
}

/// Projects a 3×3 matrix onto SO(3) in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    u * fix * v_t
}

/// Chordal L2 mean: the arithmetic mean of the matrices re-projected to the
/// nearest rotation.
pub fn chordal_mean(rotations: &[Matrix3<f64>]) -> Matrix3<f64> {
    if rotations.is_empty() {
        return Matrix3::identity();
    }
    let sum: Matrix3<f64> = rotations.iter().sum();
    nearest_rotation(&(sum / rotations.len() as f64))
}

/// Rotation matrix from intrinsic angles applied as `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn euler_to_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw).matrix()
}
