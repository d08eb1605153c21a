use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on stored standard deviations.
pub const MIN_STD: f64 = 1e-3;

/// Per-dimension affine normalizer fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Fits on a flat buffer of rows of `width` values.
    pub fn fit(values: &[f64], width: usize) -> Result<Self> {
        if width == 0 || values.is_empty() || !values.len().is_multiple_of(width) {
            return Err(Error::Shape(format!("cannot fit a {width}-wide normalizer on {} values", values.len())));
        }
        let rows = (values.len() / width) as f64;
        let mut mean = vec![0.0; width];
        for row in values.chunks_exact(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; width];
        for row in values.chunks_exact(width) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / rows).sqrt().max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    /// Per-dimension means with one standard deviation pooled over all
    /// dimensions, so low-variance dimensions are not amplified.
    pub fn fit_pooled(values: &[f64], width: usize) -> Result<Self> {
        let per_dim = Self::fit(values, width)?;
        let rows = (values.len() / width) as f64;
        let mut var = 0.0;
        for row in values.chunks_exact(width) {
            for (v, m) in row.iter().zip(&per_dim.mean) {
                var += (v - m) * (v - m);
            }
        }
        let std = (var / (rows * width as f64)).sqrt().max(MIN_STD);
        Ok(Self {
            mean: per_dim.mean,
            std: vec![std; width],
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &mut [f64]) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            *v = (*v - self.mean[i % w]) / self.std[i % w];
        }
    }

    pub fn invert(&self, values: &mut [f64]) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            *v = *v * self.std[i % w] + self.mean[i % w];
        }
    }

    /// Maps normalized-space variances back to data units.
    pub fn invert_variance(&self, values: &mut [f64]) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            *v *= self.std[i % w] * self.std[i % w];
        }
    }

    pub fn apply_variance(&self, values: &mut [f64]) {
        let w = self.width();
        for (i, v) in values.iter_mut().enumerate() {
            *v /= self.std[i % w] * self.std[i % w];
        }
    }
}
