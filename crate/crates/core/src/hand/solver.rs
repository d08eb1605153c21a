//! Recovers the translation `d` that places root-relative hand joints in the
//! camera frame by minimizing `Σ_j ‖obs_j − π(local_j + d)‖²` with Gauss-Newton.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};

use super::camera::{PinholeCamera, MIN_DEPTH};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Consecutive non-improving iterations tolerated before giving up.
    pub divergence_patience: usize,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-10,
            divergence_patience: 5,
            max_backtracks: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetSolution {
    pub offset: Vector3<f64>,
    /// Root-mean-square reprojection distance over joints, pixels.
    pub rms_px: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost of every accepted iterate, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

/// Relative step size below which rejected steps count as convergence.
const RESOLUTION: f64 = 1e-7;

fn cost(cam: &PinholeCamera, local: &[Vector3<f64>], obs: &[Vector2<f64>], d: &Vector3<f64>) -> f64 {
    let mut c = 0.0;
    for (l, o) in local.iter().zip(obs) {
        match cam.project_point(&(l + d)) {
            Some(px) => c += (px - o).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    c
}

fn check_geometry(local: &[Vector3<f64>]) -> Result<()> {
    if local.len() < 3 {
        return Err(Error::Rank("fewer than 3 joints"));
    }
    let mean: Vector3<f64> = local.iter().sum::<Vector3<f64>>() / local.len() as f64;
    let cov: Matrix3<f64> = local.iter().map(|p| (p - mean) * (p - mean).transpose()).sum();
    let mut eig = SymmetricEigen::new(cov).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig[0] <= 1e-18 || eig[1] <= 1e-12 * eig[0] {
        return Err(Error::Rank("joints are coincident or collinear"));
    }
    Ok(())
}

pub fn solve_wrist_offset(
    cam: &PinholeCamera,
    local3d: &[Vector3<f64>],
    obs2d: &[Vector2<f64>],
    init_depth: f64,
) -> Result<OffsetSolution> {
    solve_wrist_offset_with(cam, local3d, obs2d, init_depth, &SolverConfig::default())
}

pub fn solve_wrist_offset_with(
    cam: &PinholeCamera,
    local3d: &[Vector3<f64>],
    obs2d: &[Vector2<f64>],
    init_depth: f64,
    cfg: &SolverConfig,
) -> Result<OffsetSolution> {
    if local3d.len() != obs2d.len() {
        return Err(Error::Shape(format!(
            "{} local joints but {} observations",
            local3d.len(),
            obs2d.len()
        )));
    }
    if !(init_depth > 0.0) {
        return Err(Error::Config(format!("initial depth must be positive, got {init_depth}")));
    }
    check_geometry(local3d)?;

    let n = local3d.len() as f64;
    let mut d = Vector3::new(0.0, 0.0, init_depth);
    let mut current = cost(cam, local3d, obs2d, &d);
    let mut history = vec![current];
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (l, o) in local3d.iter().zip(obs2d) {
            let p = l + d;
            let (x, y, z) = (p.x, p.y, p.z);
            let ru = cam.fx * x / z + cam.cx - o.x;
            let rv = cam.fy * y / z + cam.cy - o.y;
            let ju = Vector3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z));
            let jv = Vector3::new(0.0, cam.fy / z, -cam.fy * y / (z * z));
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        let Some(inv) = jtj.try_inverse().filter(|_| jtj.determinant().abs() > 1e-300) else {
            return Err(Error::Rank("singular normal equations"));
        };
        let step = -(inv * jtr);
        if step.norm() < cfg.step_tolerance {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=cfg.max_backtracks {
            let candidate = d + step * scale;
            let all_in_front = local3d.iter().all(|l| l.z + candidate.z > MIN_DEPTH);
            if all_in_front {
                let c = cost(cam, local3d, obs2d, &candidate);
                if c <= current {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((candidate, c)) => {
                let improvement = current - c;
                d = candidate;
                current = c;
                history.push(c);
                stalled = 0;
                // A zero-improvement step at machine precision is convergence.
                if improvement == 0.0 && step.norm() * scale < cfg.step_tolerance.sqrt() {
                    converged = true;
                    break;
                }
            }
            // Cost is flat to rounding this close to the minimum.
            None if step.norm() < RESOLUTION * d.norm().max(1.0) => {
                converged = true;
                break;
            }
            None => {
                stalled += 1;
                if stalled >= cfg.divergence_patience {
                    return Err(Error::NonConvergence {
                        iterations,
                        best_offset: [d.x, d.y, d.z],
                        best_rms_px: (current / n).sqrt(),
                    });
                }
            }
        }
    }

    Ok(OffsetSolution {
        offset: d,
        rms_px: (current / n).sqrt(),
        iterations,
        converged,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::camera::project_pinhole;
    use crate::hand::template::hand_template;
    use approx::assert_abs_diff_eq;

    #[test]
    fn recovers_exact_offset() {
        let cam = PinholeCamera::centered(600.0);
        let local = hand_template(0.0);
        let truth = Vector3::new(0.0, 0.0, 2.0);
        let obs = project_pinhole(&cam, &local.iter().map(|p| p + truth).collect::<Vec<_>>()).unwrap();
        let sol = solve_wrist_offset(&cam, &local, &obs, 1.0).unwrap();
        assert!((sol.offset - truth).norm() < 1e-6, "{:?}", sol.offset);
        assert!(sol.rms_px < 1e-8);
        assert!(sol.converged);
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn collinear_joints_are_rejected() {
        let cam = PinholeCamera::centered(600.0);
        let mut local = vec![Vector3::zeros(); 21];
        for (i, p) in local.iter_mut().enumerate().take(5) {
            *p = Vector3::new(0.01 * i as f64, 0.02 * i as f64, 0.0);
        }
        let obs = vec![Vector2::new(640.0, 480.0); 21];
        assert!(matches!(solve_wrist_offset(&cam, &local, &obs, 1.0), Err(Error::Rank(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cam = PinholeCamera::centered(600.0);
        let local = hand_template(0.0);
        let obs = vec![Vector2::new(0.0, 0.0); 20];
        assert!(matches!(solve_wrist_offset(&cam, &local, &obs, 1.0), Err(Error::Shape(_))));
        let obs = vec![Vector2::new(0.0, 0.0); 21];
        assert!(matches!(solve_wrist_offset(&cam, &local, &obs, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn stalled_solver_reports_best_iterate() {
        let cam = PinholeCamera::centered(600.0);
        let local = hand_template(0.3);
        let truth = Vector3::new(0.1, -0.05, 0.3);
        let obs = project_pinhole(&cam, &local.iter().map(|p| p + truth).collect::<Vec<_>>()).unwrap();
        // Starting 50 m away, the undamped first step overshoots behind the camera.
        let cfg = SolverConfig {
            max_backtracks: 0,
            divergence_patience: 1,
            ..SolverConfig::default()
        };
        match solve_wrist_offset_with(&cam, &local, &obs, 50.0, &cfg) {
            Err(Error::NonConvergence {
                iterations,
                best_offset,
                best_rms_px,
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best_offset, [0.0, 0.0, 50.0]);
                assert_abs_diff_eq!(best_rms_px, (cost(&cam, &local, &obs, &Vector3::new(0.0, 0.0, 50.0)) / 21.0).sqrt());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        // The default line search recovers from the same start.
        let sol = solve_wrist_offset(&cam, &local, &obs, 50.0).unwrap();
        assert!((sol.offset - truth).norm() < 1e-9);
    }
}
