//! Mask-and-replace transition schedules. Tokens are 0-based: `0..K` are
//! codebook entries and `K` is MASK.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal cumulative mask probability of the default schedule. Exactly 1
/// would force `α_T = 0`.
pub const DEFAULT_MASK_END: f64 = 1.0 - 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// `γ̄_t = mask_end·t/T` and `ᾱ_t = (1 − γ̄_t)(1 − replace_end·t/T)`, both
    /// linear in t; per-step values follow by division.
    CumulativeLinear { mask_end: f64, replace_end: f64 },
    /// Per-step `β_t`, `γ_t` ramping linearly from `start` at t = 1 to `end` at t = T.
    LinearRamp { beta: (f64, f64), gamma: (f64, f64) },
    /// Per-step values given directly, index 0 is t = 1.
    Explicit { beta: Vec<f64>, gamma: Vec<f64> },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::CumulativeLinear {
            mask_end: DEFAULT_MASK_END,
            replace_end: 0.1,
        }
    }
}

/// Parameters of one mask-and-replace kernel: keep with `α + β`, move to each
/// other token with `β`, mask with `γ`; `α + Kβ + γ = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl KernelParams {
    pub const IDENTITY: KernelParams = KernelParams {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };

    /// `q(to | from)`.
    pub fn prob(&self, k: usize, to: usize, from: usize) -> f64 {
        if from == k {
            return if to == k { 1.0 } else { 0.0 };
        }
        if to == k {
            self.gamma
        } else if to == from {
            self.alpha + self.beta
        } else {
            self.beta
        }
    }

    /// Explicit `(K+1)×(K+1)` matrix with `Q[to, from]`; columns are sources.
    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(k + 1, k + 1, |to, from| self.prob(k, to, from))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSchedule {
    steps: usize,
    k: usize,
    /// Per-step values, index `t − 1`.
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    /// Cumulative values, index `t` with `t = 0` the identity.
    alpha_bar: Vec<f64>,
    gamma_bar: Vec<f64>,
}

impl TransitionSchedule {
    pub fn build(steps: usize, k: usize, cfg: &ScheduleConfig) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("need at least one step".into()));
        }
        if k < 2 {
            return Err(Error::Schedule(format!("codebook size must be at least 2, got {k}")));
        }
        let tf = steps as f64;
        let (beta, gamma): (Vec<f64>, Vec<f64>) = match cfg {
            ScheduleConfig::CumulativeLinear { mask_end, replace_end } => {
                if !(0.0..1.0).contains(mask_end) || !(0.0..1.0).contains(replace_end) {
                    return Err(Error::Schedule("mask_end and replace_end must lie in [0, 1)".into()));
                }
                let gbar = |t: usize| mask_end * t as f64 / tf;
                let abar = |t: usize| (1.0 - gbar(t)) * (1.0 - replace_end * t as f64 / tf);
                (1..=steps)
                    .map(|t| {
                        let a = abar(t) / abar(t - 1);
                        let g = 1.0 - (1.0 - gbar(t)) / (1.0 - gbar(t - 1));
                        (((1.0 - a - g) / k as f64).max(0.0), g)
                    })
                    .unzip()
            }
            ScheduleConfig::LinearRamp { beta, gamma } => {
                let ramp = |(a, b): (f64, f64), t: usize| {
                    if steps == 1 {
                        a
                    } else {
                        a + (b - a) * (t - 1) as f64 / (tf - 1.0)
                    }
                };
                (1..=steps).map(|t| (ramp(*beta, t), ramp(*gamma, t))).unzip()
            }
            ScheduleConfig::Explicit { beta, gamma } => {
                if beta.len() != steps || gamma.len() != steps {
                    return Err(Error::Schedule(format!(
                        "explicit schedule needs {steps} values, got {} and {}",
                        beta.len(),
                        gamma.len()
                    )));
                }
                (beta.clone(), gamma.clone())
            }
        };
        Self::from_steps(k, &beta, &gamma)
    }

    pub fn from_steps(k: usize, beta: &[f64], gamma: &[f64]) -> Result<Self> {
        if k < 2 {
            return Err(Error::Schedule(format!("codebook size must be at least 2, got {k}")));
        }
        if beta.is_empty() || beta.len() != gamma.len() {
            return Err(Error::Schedule("beta and gamma must be non-empty and equally long".into()));
        }
        let mut alpha = Vec::with_capacity(beta.len());
        for (i, (&b, &g)) in beta.iter().zip(gamma).enumerate() {
            if !(b >= 0.0 && g >= 0.0 && b.is_finite() && g.is_finite()) {
                return Err(Error::Schedule(format!("β and γ must be finite and non-negative at t = {}", i + 1)));
            }
            let a = 1.0 - k as f64 * b - g;
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Schedule(format!("α_{} = {a} lies outside (0, 1]", i + 1)));
            }
            alpha.push(a);
        }
        let mut alpha_bar = vec![1.0];
        let mut keep = vec![1.0];
        for (a, g) in alpha.iter().zip(gamma) {
            alpha_bar.push(alpha_bar.last().unwrap() * a);
            keep.push(keep.last().unwrap() * (1.0 - g));
        }
        Ok(Self {
            steps: beta.len(),
            k,
            alpha,
            beta: beta.to_vec(),
            gamma: gamma.to_vec(),
            alpha_bar,
            gamma_bar: keep.iter().map(|p| 1.0 - p).collect(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn codebook_size(&self) -> usize {
        self.k
    }

    pub fn mask_token(&self) -> usize {
        self.k
    }

    fn check_t(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t > self.steps || (t == 0 && !allow_zero) {
            return Err(Error::Domain(format!("step {t} outside [1, {}]", self.steps)));
        }
        Ok(())
    }

    /// One-step kernel `Q_t`, t ∈ [1, T].
    pub fn step(&self, t: usize) -> Result<KernelParams> {
        self.check_t(t, false)?;
        Ok(KernelParams {
            alpha: self.alpha[t - 1],
            beta: self.beta[t - 1],
            gamma: self.gamma[t - 1],
        })
    }

    /// Cumulative kernel `Q̄_t = Q_t···Q_1`, t ∈ [0, T].
    pub fn cumulative(&self, t: usize) -> Result<KernelParams> {
        self.check_t(t, true)?;
        if t == 0 {
            return Ok(KernelParams::IDENTITY);
        }
        let alpha = self.alpha_bar[t];
        let gamma = self.gamma_bar[t];
        Ok(KernelParams {
            alpha,
            beta: ((1.0 - alpha - gamma) / self.k as f64).max(0.0),
            gamma,
        })
    }

    /// Multi-step kernel `Q_t···Q_{s+1}` for `s < t`, itself of mask-and-replace form.
    pub fn between(&self, s: usize, t: usize) -> Result<KernelParams> {
        self.check_t(t, false)?;
        if s >= t {
            return Err(Error::Domain(format!("need s < t, got s = {s}, t = {t}")));
        }
        if s + 1 == t {
            return self.step(t);
        }
        let alpha = self.alpha_bar[t] / self.alpha_bar[s];
        let gamma = 1.0 - (1.0 - self.gamma_bar[t]) / (1.0 - self.gamma_bar[s]);
        Ok(KernelParams {
            alpha,
            beta: ((1.0 - alpha - gamma) / self.k as f64).max(0.0),
            gamma,
        })
    }
}
