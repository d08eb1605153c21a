//! Small layer library over candle with seeded, reproducible initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sparsepose_core::container::{ArrayReader, ArrayWriter};

use crate::error::{Error, Result};

pub fn device() -> Device {
    Device::Cpu
}

/// Named trainable parameters. Initialization draws from a ChaCha stream, so
/// a store built twice from the same seed holds bit-identical values.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore").field("tensors", &self.vars.len()).finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &device())?)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        self.insert(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![value; n])
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        self.constant(name, shape, 0.0)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn write(&self, w: &mut ArrayWriter, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let values = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            w.f32_raw(&format!("{prefix}{name}"), var.dims(), &values)?;
        }
        Ok(())
    }

    /// Overwrites every parameter from `r`; all names and shapes must match.
    pub fn read(&self, r: &ArrayReader, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let (shape, values) = r.f32_raw(&format!("{prefix}{name}"))?;
            if shape != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint shape {shape:?}, model shape {:?}",
                    var.dims()
                )));
            }
            var.set(&Tensor::from_vec(values, shape, &device())?)?;
        }
        Ok(())
    }
}

/// `y = x W + b` over the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Option<Var>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_std(ps, name, d_in, d_out, 1.0 / (d_in as f64).sqrt())
    }

    pub fn with_std(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, std: f64) -> Result<Self> {
        Ok(Self {
            w: ps.normal(&format!("{name}.w"), &[d_in, d_out], std)?,
            b: Some(ps.zeros(&format!("{name}.b"), &[d_out])?),
        })
    }

    pub fn no_bias(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: ps.normal(&format!("{name}.w"), &[d_in, d_out], 1.0 / (d_in as f64).sqrt())?,
            b: None,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
        let rows = x.elem_count() / d_in.max(1);
        let y = x.reshape((rows, d_in))?.matmul(self.w.as_tensor())?;
        let y = match &self.b {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.w.dims()[1];
        Ok(y.reshape(out)?)
    }
}

/// Normalizes over the last dimension without affine parameters.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.g"), &[d], 1.0)?,
            beta: ps.zeros(&format!("{name}.b"), &[d])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(layer_norm(x, 1e-5)?
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

/// Multi-head self-attention with an optional additive score bias
/// broadcastable to `[B, H, N, N]`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("model width {d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            qkv: Linear::new(ps, &format!("{name}.qkv"), d, 3 * d)?,
            out: Linear::new(ps, &format!("{name}.out"), d, d)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let h = self.heads;
        let dh = d / h;
        let qkv = self.qkv.forward(x)?.reshape((b, n, 3, h, dh))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = candle_nn::ops::softmax_last_dim(&scores)?;
        let y = attn.matmul(&v)?.permute((0, 2, 1, 3))?.reshape((b, n, d))?;
        self.out.forward(&y)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(ps, &format!("{name}.up"), d, hidden)?,
            down: Linear::new(ps, &format!("{name}.down"), hidden, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl Block {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            ff: FeedForward::new(ps, &format!("{name}.ff"), d, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?, bias)?)?;
        Ok((&x + self.ff.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// Stride-1 temporal convolution over `[B, C, L]` with same-length padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: Var,
    pub b: Var,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {kernel} must be odd to preserve length")));
        }
        let std = 1.0 / ((c_in * kernel) as f64).sqrt();
        Ok(Self {
            w: ps.normal(&format!("{name}.w"), &[c_out, c_in, kernel], std)?,
            b: ps.zeros(&format!("{name}.b"), &[c_out])?,
            kernel,
        })
    }

    /// Built from shifted slices and a matmul rather than the native conv op,
    /// whose kernel gradient is wrong under padding.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c_in, len) = x.dims3()?;
        let (c_out, _, k) = self.w.dims3()?;
        let pad = k / 2;
        let x = if pad > 0 {
            let z = Tensor::zeros((b, c_in, pad), x.dtype(), x.device())?;
            Tensor::cat(&[&z, x, &z], 2)?
        } else {
            x.clone()
        };
        let shifts = (0..k).map(|i| x.narrow(2, i, len)).collect::<candle_core::Result<Vec<_>>>()?;
        let cols = Tensor::stack(&shifts, 2)?.reshape((b, c_in * k, len))?;
        let w = self.w.as_tensor().reshape((1, c_out, c_in * k))?;
        let y = w.broadcast_matmul(&cols)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, c_out, 1))?)?)
    }
}

/// Standard sinusoidal table `[n, d]`: even columns sin, odd columns cos.
pub fn sinusoidal_table(n: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0f32; n * d];
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    out
}

/// `log(1 + e^x)` evaluated without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

pub fn tensor_f64(values: &[f64], shape: &[usize]) -> Result<Tensor> {
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

pub fn to_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    /// Linear warmup length in steps.
    pub warmup_steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            warmup_steps: 20,
        }
    }
}

/// AdamW with warmup and global-norm clipping.
pub struct Trainer {
    opt: AdamW,
    vars: Vec<Var>,
    cfg: OptimConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, cfg: OptimConfig) -> Result<Self> {
        let opt = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: cfg.weight_decay,
                ..ParamsAdamW::default()
            },
        )?;
        Ok(Self {
            opt,
            vars,
            cfg,
            steps: 0,
        })
    }

    /// Backpropagates `loss`, applies one update and returns the loss value.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        let value = loss.to_dtype(DType::F32)?.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at step {}", self.steps)));
        }
        let warm = self.cfg.warmup_steps.max(1) as f64;
        let lr = self.cfg.learning_rate * ((self.steps + 1) as f64 / warm).min(1.0);
        self.opt.set_learning_rate(lr);
        let mut grads = loss.backward()?;
        if self.cfg.grad_clip > 0.0 {
            let mut sq = 0f64;
            for v in &self.vars {
                if let Some(g) = grads.get(v.as_tensor()) {
                    sq += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
                }
            }
            let norm = sq.sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at step {}", self.steps)));
            }
            if norm > self.cfg.grad_clip {
                let scale = self.cfg.grad_clip / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), (g * scale)?);
                    }
                }
            }
        }
        self.opt.step(&grads)?;
        self.steps += 1;
        Ok(value)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Exponential moving average of a loss curve, for monotonicity checks.
pub fn smooth(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let s = match acc {
            None => v,
            Some(a) => alpha * a + (1.0 - alpha) * v,
        };
        acc = Some(s);
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_parameters() {
        let mut a = ParamStore::new(3);
        let mut b = ParamStore::new(3);
        let la = Linear::new(&mut a, "l", 4, 5).unwrap();
        let lb = Linear::new(&mut b, "l", 4, 5).unwrap();
        assert_eq!(to_f64(la.w.as_tensor()).unwrap(), to_f64(lb.w.as_tensor()).unwrap());
        assert!(a.normal("l.w", &[1], 1.0).is_err());
    }

    #[test]
    fn conv_matches_native_forward_and_finite_differences() {
        let mut ps = ParamStore::new(4);
        let conv = Conv1d::new(&mut ps, "c", 3, 4, 3).unwrap();
        let x = Tensor::from_vec((0..42).map(|i| ((i * 7 % 11) as f32 - 5.0) / 4.0).collect::<Vec<_>>(), (2, 3, 7), &device()).unwrap();
        let native = x.conv1d(conv.w.as_tensor(), 1, 1, 1, 1).unwrap();
        let ours = conv.forward(&x).unwrap();
        let diff = (native - &ours).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5);

        let loss = |c: &Conv1d| conv_loss(c, &x);
        let g = loss(&conv).backward().unwrap();
        let analytic = to_f64(g.get(conv.w.as_tensor()).unwrap()).unwrap();
        let w0 = to_f64(conv.w.as_tensor()).unwrap();
        for i in [0, 5, 13, 20, 35] {
            let eval = |delta: f64| {
                let mut w = w0.clone();
                w[i] += delta;
                conv.w.set(&tensor_f64(&w, &[4, 3, 3]).unwrap()).unwrap();
                f64::from(loss(&conv).to_scalar::<f32>().unwrap())
            };
            let fd = (eval(1e-2) - eval(-1e-2)) / 2e-2;
            assert!((fd - analytic[i]).abs() < 2e-2 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
        }
    }

    fn conv_loss(c: &Conv1d, x: &Tensor) -> Tensor {
        c.forward(x).unwrap().sqr().unwrap().sum_all().unwrap()
    }

    #[test]
    fn linear_handles_leading_dimensions() {
        let mut ps = ParamStore::new(0);
        let l = Linear::new(&mut ps, "l", 3, 2).unwrap();
        let x = Tensor::ones((2, 4, 3), DType::F32, &device()).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 4, 2]);
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let x = tensor_f64(&[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0], &[2, 4]).unwrap();
        let y = to_f64(&layer_norm(&x, 0.0).unwrap()).unwrap();
        for row in y.chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn softplus_is_stable_and_positive() {
        let x = tensor_f64(&[-200.0, -1.0, 0.0, 1.0, 200.0], &[5]).unwrap();
        let y = to_f64(&softplus(&x).unwrap()).unwrap();
        assert!(y.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((y[2] - 2f64.ln()).abs() < 1e-6);
        assert!((y[4] - 200.0).abs() < 1e-4);
    }

    #[test]
    fn masked_attention_ignores_masked_keys() {
        let mut ps = ParamStore::new(1);
        let attn = Attention::new(&mut ps, "a", 8, 2).unwrap();
        let base: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut changed = base.clone();
        for v in &mut changed[16..] {
            *v = 5.0;
        }
        let bias = tensor_f64(&[0.0, 0.0, -1e9], &[1, 1, 1, 3]).unwrap();
        let run = |v: &[f64]| {
            let y = attn.forward(&tensor_f64(v, &[1, 3, 8]).unwrap(), Some(&bias)).unwrap();
            to_f64(&y.narrow(1, 0, 2).unwrap()).unwrap()
        };
        assert_eq!(run(&base), run(&changed));
    }

    #[test]
    fn parameters_round_trip_through_container() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamStore::new(9);
        Linear::new(&mut ps, "l", 3, 2).unwrap();
        let mut w = ArrayWriter::create(dir.path()).unwrap();
        ps.write(&mut w, "p.").unwrap();
        w.finish("params", serde_json::Value::Null).unwrap();
        let mut other = ParamStore::new(10);
        let l2 = Linear::new(&mut other, "l", 3, 2).unwrap();
        other.read(&ArrayReader::open(dir.path()).unwrap(), "p.").unwrap();
        assert_eq!(
            to_f64(l2.w.as_tensor()).unwrap(),
            to_f64(ps.get("l.w").unwrap().as_tensor()).unwrap()
        );
    }

    #[test]
    fn trainer_reduces_a_quadratic() {
        let mut ps = ParamStore::new(2);
        let l = Linear::new(&mut ps, "l", 2, 1).unwrap();
        let mut tr = Trainer::new(
            ps.vars(),
            OptimConfig {
                learning_rate: 0.05,
                weight_decay: 0.0,
                grad_clip: 1.0,
                warmup_steps: 1,
            },
        )
        .unwrap();
        let x = tensor_f64(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        let y = tensor_f64(&[1.0, -1.0, 0.0], &[3, 1]).unwrap();
        let mut losses = Vec::new();
        for _ in 0..200 {
            let loss = (l.forward(&x).unwrap() - &y).unwrap().sqr().unwrap().mean_all().unwrap();
            losses.push(tr.step(&loss).unwrap());
        }
        assert!(losses.last().unwrap() < &1e-3, "{:?}", losses.last());
    }
}
