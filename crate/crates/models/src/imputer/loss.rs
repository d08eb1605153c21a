//! β-NLL: Gaussian NLL weighted per element by a stop-gradient `(σ²)^β`.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Per-element value and partial derivatives with the weight held constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaNllTerm {
    pub value: f64,
    pub d_mean: f64,
    pub d_var: f64,
}

pub fn beta_nll_term(mean: f64, var: f64, target: f64, beta: f64) -> Result<BetaNllTerm> {
    if !(var > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {var}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("β must lie in [0, 1], got {beta}")));
    }
    let weight = var.powf(beta);
    let r = mean - target;
    Ok(BetaNllTerm {
        value: weight * (0.5 * var.ln() + r * r / (2.0 * var)),
        d_mean: weight * r / var,
        d_var: weight * (0.5 / var - r * r / (2.0 * var * var)),
    })
}

/// Mean of the per-element terms.
pub fn beta_nll_loss(mean: &[f64], var: &[f64], target: &[f64], beta: f64) -> Result<f64> {
    if mean.len() != var.len() || mean.len() != target.len() || mean.is_empty() {
        return Err(Error::Shape("β-NLL inputs must be non-empty and equally long".into()));
    }
    let mut total = 0.0;
    for ((&m, &v), &y) in mean.iter().zip(var).zip(target) {
        total += beta_nll_term(m, v, y, beta)?.value;
    }
    Ok(total / mean.len() as f64)
}

/// Plain Gaussian NLL without the constant, averaged.
pub fn gaussian_nll(mean: &[f64], var: &[f64], target: &[f64]) -> f64 {
    let n = mean.len() as f64;
    mean.iter()
        .zip(var)
        .zip(target)
        .map(|((m, v), y)| 0.5 * v.ln() + (m - y) * (m - y) / (2.0 * v))
        .sum::<f64>()
        / n
}

/// Differentiable β-NLL; the weight is detached from the graph.
pub fn beta_nll_tensor(mean: &Tensor, var: &Tensor, target: &Tensor, beta: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("β must lie in [0, 1], got {beta}")));
    }
    let sq = (mean - target)?.sqr()?;
    let nll = ((var.log()? * 0.5)? + (sq / (var * 2.0)?)?)?;
    let weighted = if beta == 0.0 {
        nll
    } else {
        (nll * var.detach().powf(beta)?)?
    };
    Ok(weighted.mean_all()?)
}
