//! Nearest-prototype quantization and the EMA-maintained codebook.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the nearest prototype to each `dim`-wide row of `z`; ties go to
/// the lowest index.
pub fn vq_quantize(z: &[f64], codebook: &[f64], dim: usize) -> Result<Vec<usize>> {
    if dim == 0 || codebook.is_empty() || !codebook.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("codebook of {} values is not a whole number of {dim}-wide rows", codebook.len())));
    }
    if !z.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} latent values are not a whole number of {dim}-wide rows", z.len())));
    }
    Ok(z.chunks_exact(dim)
        .map(|q| {
            let mut best = (f64::INFINITY, 0);
            for (i, c) in codebook.chunks_exact(dim).enumerate() {
                let mut d = 0.0;
                for (a, b) in q.iter().zip(c) {
                    d += (a - b) * (a - b);
                }
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmaConfig {
    pub decay: f64,
    /// Laplace smoothing of the cluster counts.
    pub epsilon: f64,
    /// A code unused for this many updates is moved onto a random batch latent.
    pub dead_after: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            epsilon: 1e-5,
            dead_after: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub vectors: Vec<f64>,
    ema_count: Vec<f64>,
    ema_sum: Vec<f64>,
    last_used: Vec<u64>,
    updates: u64,
}

impl Codebook {
    pub fn from_vectors(k: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("codebook needs at least 2 entries, got {k}")));
        }
        if vectors.len() != k * dim || vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("codebook vectors must be finite and k × dim".into()));
        }
        Ok(Self {
            k,
            dim,
            ema_count: vec![1.0; k],
            ema_sum: vectors.clone(),
            vectors,
            last_used: vec![0; k],
            updates: 0,
        })
    }

    /// Prototypes drawn from the given latent rows (with replacement).
    pub fn from_samples<R: Rng>(k: usize, dim: usize, latents: &[f64], rng: &mut R) -> Result<Self> {
        let n = latents.len() / dim.max(1);
        if n == 0 {
            return Err(Error::Config("no latents to initialize the codebook".into()));
        }
        let mut v = Vec::with_capacity(k * dim);
        for _ in 0..k {
            let i = rng.random_range(0..n);
            v.extend_from_slice(&latents[i * dim..(i + 1) * dim]);
        }
        Self::from_vectors(k, dim, v)
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn quantize(&self, z: &[f64]) -> Result<Vec<usize>> {
        vq_quantize(z, &self.vectors, self.dim)
    }

    pub fn lookup(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.k {
                return Err(Error::Domain(format!("token {i} is outside the {}-entry codebook", self.k)));
            }
            out.extend_from_slice(self.vector(i));
        }
        Ok(out)
    }

    /// One EMA step from a batch of latents and their assignments.
    pub fn ema_update<R: Rng>(&mut self, z: &[f64], indices: &[usize], cfg: &EmaConfig, rng: &mut R) -> Result<()> {
        let d = self.dim;
        if z.len() != indices.len() * d || indices.is_empty() {
            return Err(Error::Shape("EMA update needs one non-empty index per latent row".into()));
        }
        self.updates += 1;
        let mut count = vec![0.0; self.k];
        let mut sum = vec![0.0; self.k * d];
        for (row, &i) in z.chunks_exact(d).zip(indices) {
            count[i] += 1.0;
            for c in 0..d {
                sum[i * d + c] += row[c];
            }
            self.last_used[i] = self.updates;
        }
        let g = cfg.decay;
        for i in 0..self.k {
            self.ema_count[i] = g * self.ema_count[i] + (1.0 - g) * count[i];
            for c in 0..d {
                self.ema_sum[i * d + c] = g * self.ema_sum[i * d + c] + (1.0 - g) * sum[i * d + c];
            }
        }
        let total: f64 = self.ema_count.iter().sum();
        let kf = self.k as f64;
        for i in 0..self.k {
            let smoothed = (self.ema_count[i] + cfg.epsilon) / (total + kf * cfg.epsilon) * total;
            for c in 0..d {
                self.vectors[i * d + c] = self.ema_sum[i * d + c] / smoothed;
            }
        }
        let n = indices.len();
        for i in 0..self.k {
            if self.updates - self.last_used[i] >= cfg.dead_after {
                let j = rng.random_range(0..n);
                let row = &z[j * d..(j + 1) * d];
                self.vectors[i * d..(i + 1) * d].copy_from_slice(row);
                self.ema_sum[i * d..(i + 1) * d].copy_from_slice(row);
                self.ema_count[i] = 1.0;
                self.last_used[i] = self.updates;
            }
        }
        Ok(())
    }
}

/// Fraction of codebook entries that no index in `indices` selects.
pub fn dead_fraction(indices: &[usize], k: usize) -> f64 {
    let mut used = vec![false; k];
    for &i in indices {
        if i < k {
            used[i] = true;
        }
    }
    used.iter().filter(|&&u| !u).count() as f64 / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn worked_examples() {
        let cb = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(vq_quantize(&[0.2, 0.1], &cb, 2).unwrap(), vec![0]);
        let cb3 = [0.0, 0.0, 1.0, 1.0, 3.0, -1.0, 5.0, 5.0];
        assert_eq!(vq_quantize(&[3.0, -1.0], &cb3, 2).unwrap(), vec![2]);
        // Equidistant from entries 0 and 1.
        assert_eq!(vq_quantize(&[0.5, 0.5], &cb, 2).unwrap(), vec![0]);
        assert!(vq_quantize(&[0.0; 3], &cb, 2).is_err());
    }

    #[test]
    fn ema_moves_codes_toward_assigned_latents_and_revives_dead_ones() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut cb = Codebook::from_vectors(3, 1, vec![0.0, 10.0, 100.0]).unwrap();
        let cfg = EmaConfig {
            decay: 0.5,
            epsilon: 1e-9,
            dead_after: 4,
        };
        for _ in 0..3 {
            cb.ema_update(&[1.0, 1.0, 9.0], &[0, 0, 1], &cfg, &mut rng).unwrap();
        }
        assert!((cb.vectors[0] - 1.0).abs() < 0.2, "{:?}", cb.vectors);
        assert!((cb.vectors[1] - 9.0).abs() < 0.2, "{:?}", cb.vectors);
        cb.ema_update(&[1.0, 1.0, 9.0], &[0, 0, 1], &cfg, &mut rng).unwrap();
        // Entry 2 was never selected and has now been reset onto a batch latent.
        assert!(cb.vectors[2] == 1.0 || cb.vectors[2] == 9.0);
        assert!(cb.lookup(&[3]).is_err());
        assert_eq!(dead_fraction(&[0, 0, 1], 4), 0.5);
    }
}
