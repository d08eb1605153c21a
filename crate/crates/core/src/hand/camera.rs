use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DEPTH: f64 = 1e-6;

/// Zero-skew pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(Error::Config("principal point lies outside the image".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// A 1280×960 camera with the given focal length and a centered principal point.
    pub fn centered(focal: f64) -> Self {
        Self::new(focal, focal, 640.0, 480.0, 1280, 960).expect("valid centered camera")
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > MIN_DEPTH).then(|| Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

pub fn project_pinhole(cam: &PinholeCamera, points: &[Vector3<f64>]) -> Result<Vec<Vector2<f64>>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| cam.project_point(p).ok_or(Error::BehindCamera { index, depth: p.z }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projects_known_points() {
        let cam = PinholeCamera::new(100.0, 100.0, 0.0, 0.0, 640, 480).unwrap();
        let px = project_pinhole(&cam, &[Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.5, 0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(px[0], Vector2::new(0.0, 0.0));
        assert_abs_diff_eq!(px[1], Vector2::new(50.0, 0.0));

        // 200·1/2 + 10 = 110, 100·1/2 + 20 = 70.
        let cam = PinholeCamera::new(200.0, 100.0, 10.0, 20.0, 640, 480).unwrap();
        let px = project_pinhole(&cam, &[Vector3::new(1.0, 1.0, 2.0)]).unwrap();
        assert_abs_diff_eq!(px[0], Vector2::new(110.0, 70.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = PinholeCamera::centered(600.0);
        let err = project_pinhole(&cam, &[Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -0.5)]).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { index: 1, .. }));
        assert!(project_pinhole(&cam, &[Vector3::new(0.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn rejects_invalid_intrinsics() {
        assert!(PinholeCamera::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 20.0, 0.0, 10, 10).is_err());
    }
}
