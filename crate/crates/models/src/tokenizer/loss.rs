use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReconstructionLoss {
    L2,
    Wing { width: f64, curvature: f64 },
}

impl ReconstructionLoss {
    pub const WING: ReconstructionLoss = ReconstructionLoss::Wing {
        width: 5.0,
        curvature: 4.0,
    };

    /// Mean over all elements of the loss applied to `a − b`.
    pub fn apply(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let diff = (a - b)?;
        match *self {
            ReconstructionLoss::L2 => Ok(diff.sqr()?.mean_all()?),
            ReconstructionLoss::Wing { width, curvature } => {
                if !(width > 0.0 && curvature > 0.0) {
                    return Err(Error::Config("wing loss width and curvature must be positive".into()));
                }
                let c = width - width * (1.0 + width / curvature).ln();
                let abs = diff.abs()?;
                let near = ((&abs * (1.0 / curvature))? + 1.0)?.log()?.affine(width, 0.0)?;
                let far = (&abs - c)?;
                let inside = abs.lt(width)?;
                Ok(inside.where_cond(&near, &far)?.mean_all()?)
            }
        }
    }
}

/// Scalar form of the wing loss for one residual.
pub fn wing(x: f64, width: f64, curvature: f64) -> f64 {
    let a = x.abs();
    if a < width {
        width * (1.0 + a / curvature).ln()
    } else {
        a - (width - width * (1.0 + width / curvature).ln())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqLossWeights {
    pub reconstruction: ReconstructionLoss,
    pub commitment: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Default for VqLossWeights {
    fn default() -> Self {
        Self {
            reconstruction: ReconstructionLoss::L2,
            commitment: 0.25,
            velocity: 10.0,
            acceleration: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqLossParts {
    pub reconstruction: f64,
    /// `‖z_q − sg[z]‖²`; carries no gradient when the codebook follows EMA updates.
    pub codebook: f64,
    /// Already scaled by the commitment weight.
    pub commitment: f64,
    /// Unweighted.
    pub velocity: f64,
    pub acceleration: f64,
    pub total: f64,
}

fn diff_time(x: &Tensor) -> Result<Tensor> {
    let n = x.dim(D::Minus1)?;
    Ok((x.narrow(D::Minus1, 1, n - 1)? - x.narrow(D::Minus1, 0, n - 1)?)?)
}

/// Forward value `z_q`, gradient passed to `z` unchanged.
pub fn straight_through(z: &Tensor, z_q: &Tensor) -> Result<Tensor> {
    if z.dims() != z_q.dims() {
        return Err(Error::Shape("straight-through operands disagree in shape".into()));
    }
    Ok((z + (z_q - z)?.detach())?)
}

/// `x`, `x̂` are `[B, F, T]`; `z`, `z_q` are `[B, D, T]`. Frame differences
/// run along the last axis, so T ≥ 3 is required.
pub fn vqvae_loss(x: &Tensor, x_hat: &Tensor, z: &Tensor, z_q: &Tensor, w: &VqLossWeights) -> Result<(Tensor, VqLossParts)> {
    if x.dims() != x_hat.dims() || z.dims() != z_q.dims() {
        return Err(Error::Shape("vqvae_loss operands disagree in shape".into()));
    }
    if x.dim(D::Minus1)? < 3 {
        return Err(Error::Shape("need at least three frames for the acceleration term".into()));
    }
    let rec = w.reconstruction.apply(x_hat, x)?;
    let codebook = (z_q - z.detach())?.sqr()?.mean_all()?;
    let commit = ((z - z_q.detach())?.sqr()?.mean_all()? * w.commitment)?;
    let (vx, vh) = (diff_time(x)?, diff_time(x_hat)?);
    let vel = w.reconstruction.apply(&vh, &vx)?;
    let acc = w.reconstruction.apply(&diff_time(&vh)?, &diff_time(&vx)?)?;
    let total = ((((&rec + &codebook)? + &commit)? + (&vel * w.velocity)?)? + (&acc * w.acceleration)?)?;
    let scalar = |t: &Tensor| -> Result<f64> { Ok(f64::from(t.to_scalar::<f32>()?)) };
    let parts = VqLossParts {
        reconstruction: scalar(&rec)?,
        codebook: scalar(&codebook)?,
        commitment: scalar(&commit)?,
        velocity: scalar(&vel)?,
        acceleration: scalar(&acc)?,
        total: scalar(&total)?,
    };
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor_f64;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        tensor_f64(v, shape).unwrap()
    }

    #[test]
    fn zero_when_perfect_and_offsets_only_hit_reconstruction() {
        let xs: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let zs: Vec<f64> = (0..2 * 4 * 5).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = t(&xs, &[2, 3, 5]);
        let z = t(&zs, &[2, 4, 5]);
        let (_, p) = vqvae_loss(&x, &x, &z, &z, &VqLossWeights::default()).unwrap();
        assert_eq!(p.total, 0.0);
        let shifted = (&x + 0.5).unwrap();
        let (_, p) = vqvae_loss(&x, &shifted, &z, &z, &VqLossWeights::default()).unwrap();
        assert!(p.reconstruction > 0.0);
        assert!(p.velocity.abs() < 1e-12 && p.acceleration.abs() < 1e-12);
    }

    #[test]
    fn commitment_is_linear_in_its_weight() {
        let x = t(&[0.0; 12], &[1, 2, 6]);
        let z = t(&[0.5, -1.0, 2.0, 0.0, 1.0, 3.0], &[1, 1, 6]);
        let zq = t(&[0.0; 6], &[1, 1, 6]);
        let mut w = VqLossWeights::default();
        let (_, a) = vqvae_loss(&x, &x, &z, &zq, &w).unwrap();
        w.commitment *= 2.0;
        let (_, b) = vqvae_loss(&x, &x, &z, &zq, &w).unwrap();
        assert_eq!(b.commitment, 2.0 * a.commitment);
        assert!(a.codebook > 0.0);
    }

    #[test]
    fn wing_tensor_matches_scalar_and_is_continuous() {
        let r = [-7.0, -5.0, -1.0, 0.0, 0.3, 4.999, 5.0, 12.0];
        let got = ReconstructionLoss::WING.apply(&t(&r, &[8]), &t(&[0.0; 8], &[8])).unwrap();
        let expect = r.iter().map(|&x| wing(x, 5.0, 4.0)).sum::<f64>() / 8.0;
        assert!((f64::from(got.to_scalar::<f32>().unwrap()) - expect).abs() < 1e-5);
        assert!((wing(5.0 - 1e-9, 5.0, 4.0) - wing(5.0, 5.0, 4.0)).abs() < 1e-8);
    }
}
