//! AdaLN-conditioned transformer predicting `p(z_0 | z_t, y)`, its training
//! objective and the strided reverse sampler.

use std::path::Path;

use candle_core::{Tensor, Var, D};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sparsepose_core::container::{ArrayReader, ArrayWriter};
use sparsepose_core::synth::tracking::{HandDim, HEAD_DIM};

use super::kernels::{posterior, reverse_distribution, sample_categorical};
use super::schedule::{ScheduleConfig, TransitionSchedule};
use crate::error::{Error, Result};
use crate::guidance::{ConditioningVector, GuidanceStrategy};
use crate::imputer::features::{canonicalize, FeatureNormalizer};
use crate::nn::{device, layer_norm, sinusoidal_table, to_f64, Attention, FeedForward, Linear, ParamStore};

pub const CHECKPOINT_KIND: &str = "sparsepose.denoiser";
const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserArch {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            layers: 4,
            ff_mult: 4,
        }
    }
}

/// Which hand features the condition embedding consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandInput {
    /// Head-only conditioning.
    None,
    /// Guided hand means (none, sample and dropout strategies).
    Mean,
    /// Means and uncertainties side by side.
    MeanAndUncertainty,
}

impl HandInput {
    pub fn for_strategy(strategy: GuidanceStrategy) -> Self {
        match strategy {
            GuidanceStrategy::DistEmbed => HandInput::MeanAndUncertainty,
            _ => HandInput::Mean,
        }
    }

    /// Embedding input width per frame for a `hand_width`-wide single-hand state.
    pub fn width(self, hand_width: usize) -> usize {
        match self {
            HandInput::None => 0,
            HandInput::Mean => 2 * hand_width,
            HandInput::MeanAndUncertainty => 4 * hand_width,
        }
    }
}

/// Conditions in the normalized, window-canonical frame.
#[derive(Clone, Debug)]
pub struct CondBatch {
    pub batch: usize,
    /// `[B, T, HEAD_DIM]`.
    pub head: Tensor,
    /// `[B, T, width]`, absent for head-only models.
    pub hands: Option<Tensor>,
}

/// DiT-style block: the step embedding sets the shifts, scales and gates of
/// both sub-layers.
#[derive(Clone, Debug)]
struct AdaBlock {
    modulation: Linear,
    attn: Attention,
    ff: FeedForward,
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(layer_norm(x, 1e-6)?.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}

impl AdaBlock {
    fn forward(&self, x: &Tensor, cond: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)?;
        let m = self.modulation.forward(cond)?.unsqueeze(1)?;
        let part = |i: usize| m.narrow(D::Minus1, i * d, d);
        let h = modulate(x, &part(0)?, &part(1)?)?;
        let x = (x + self.attn.forward(&h, Some(bias))?.broadcast_mul(&(part(2)? + 1.0)?)?)?;
        let h = modulate(&x, &part(3)?, &part(4)?)?;
        Ok((&x + self.ff.forward(&h)?.broadcast_mul(&(part(5)? + 1.0)?)?)?)
    }
}

#[derive(Debug)]
pub struct Denoiser {
    pub arch: DenoiserArch,
    pub frames: usize,
    pub hand_dim: HandDim,
    pub hand_input: HandInput,
    pub normalizer: FeatureNormalizer,
    pub schedule_config: ScheduleConfig,
    pub schedule: TransitionSchedule,
    pub store: ParamStore,
    token_embed: Var,
    head_embed: Linear,
    hand_embed: Option<Linear>,
    fuse: Linear,
    step_table: Tensor,
    step_mlp: (Linear, Linear),
    blocks: Vec<AdaBlock>,
    relative: Var,
    relative_onehot: Tensor,
    final_modulation: Linear,
    out: Linear,
}

impl Denoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arch: &DenoiserArch,
        frames: usize,
        steps: usize,
        codebook_size: usize,
        schedule_config: &ScheduleConfig,
        hand_dim: HandDim,
        hand_input: HandInput,
        normalizer: FeatureNormalizer,
        seed: u64,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Config("denoiser needs at least one frame".into()));
        }
        if normalizer.hand_width() != hand_dim.width() || normalizer.head.width() != HEAD_DIM {
            return Err(Error::Config("condition normalizer does not match the hand state".into()));
        }
        let schedule = TransitionSchedule::build(steps, codebook_size, schedule_config)?;
        let d = arch.d_model;
        let k = codebook_size;
        let mut ps = ParamStore::new(seed);
        let token_embed = ps.normal("embed.token", &[k + 1, d], 1.0)?;
        let head_embed = Linear::new(&mut ps, "embed.head", HEAD_DIM, d)?;
        let hw = hand_input.width(hand_dim.width());
        let hand_embed = if hw > 0 {
            Some(Linear::new(&mut ps, "embed.hand", hw, d)?)
        } else {
            None
        };
        let parts = if hand_embed.is_some() { 3 } else { 2 };
        let fuse = Linear::new(&mut ps, "embed.fuse", parts * d, d)?;
        let step_table = Tensor::from_vec(sinusoidal_table(steps + 1, d), (steps + 1, d), &device())?;
        let step_mlp = (
            Linear::new(&mut ps, "step.0", d, d)?,
            Linear::new(&mut ps, "step.1", d, d)?,
        );
        let mut blocks = Vec::with_capacity(arch.layers);
        for i in 0..arch.layers {
            blocks.push(AdaBlock {
                modulation: Linear::with_std(&mut ps, &format!("block{i}.mod"), d, 6 * d, 0.02)?,
                attn: Attention::new(&mut ps, &format!("block{i}.attn"), d, arch.heads)?,
                ff: FeedForward::new(&mut ps, &format!("block{i}.ff"), d, arch.ff_mult * d)?,
            });
        }
        let span = 2 * frames - 1;
        let relative = ps.zeros("relative_bias", &[arch.heads, span])?;
        let mut onehot = vec![0f32; span * frames * frames];
        for i in 0..frames {
            for j in 0..frames {
                onehot[(j + frames - 1 - i) * frames * frames + i * frames + j] = 1.0;
            }
        }
        let relative_onehot = Tensor::from_vec(onehot, (span, frames * frames), &device())?;
        let final_modulation = Linear::with_std(&mut ps, "final.mod", d, 2 * d, 0.02)?;
        let out = Linear::new(&mut ps, "out", d, k)?;
        Ok(Self {
            arch: *arch,
            frames,
            hand_dim,
            hand_input,
            normalizer,
            schedule_config: schedule_config.clone(),
            schedule,
            store: ps,
            token_embed,
            head_embed,
            hand_embed,
            fuse,
            step_table,
            step_mlp,
            blocks,
            relative,
            relative_onehot,
            final_modulation,
            out,
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.schedule.codebook_size()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// Canonicalized, normalized features of one condition: `(head, hands)`
    /// rows of `T × HEAD_DIM` and `T × HandInput::width`.
    pub fn prepare(&self, cond: &ConditioningVector) -> Result<(Vec<f32>, Vec<f32>)> {
        let t = self.frames;
        let w = self.hand_dim.width();
        if cond.frames != t || cond.head.len() != t * HEAD_DIM {
            return Err(Error::Shape(format!(
                "condition spans {} frames, the denoiser expects {t}",
                cond.frames
            )));
        }
        let wants_hands = self.hand_input != HandInput::None;
        if wants_hands != (cond.hand_width > 0) {
            return Err(Error::Shape("condition and denoiser disagree on hand conditioning".into()));
        }
        if wants_hands && (cond.hand_width != 2 * w || cond.hands.len() != t * 2 * w) {
            return Err(Error::Shape(format!("hand condition width {} does not match {}", cond.hand_width, 2 * w)));
        }
        let with_unc = self.hand_input == HandInput::MeanAndUncertainty;
        if with_unc != !cond.uncertainty.is_empty() {
            return Err(Error::Shape("uncertainty features present exactly when the model embeds them".into()));
        }
        let p = sparsepose_core::synth::tracking::head_layout::POSITION.start;
        let origin = [cond.head[p], cond.head[p + 2]];
        let mut head = cond.head.clone();
        let mut hands = cond.hands.clone();
        canonicalize(&mut head, &mut hands, w, origin);
        self.normalizer.head.apply(&mut head);
        let head: Vec<f32> = head.iter().map(|&v| v as f32).collect();
        if !wants_hands {
            return Ok((head, Vec::new()));
        }
        self.normalizer.hands.apply(&mut hands);
        for (h, &k) in hands.iter_mut().zip(&cond.keep) {
            if !k {
                *h = 0.0;
            }
        }
        let hw = self.hand_input.width(w);
        let mut out = Vec::with_capacity(t * hw);
        for f in 0..t {
            let row = f * 2 * w..(f + 1) * 2 * w;
            out.extend(hands[row.clone()].iter().map(|&v| v as f32));
            if with_unc {
                let u = &cond.uncertainty[row];
                out.extend(u.iter().zip(&self.normalizer.hands.std).map(|(u, s)| (u.sqrt() / s) as f32));
            }
        }
        Ok((head, out))
    }

    pub fn cond_batch(&self, conds: &[&ConditioningVector]) -> Result<CondBatch> {
        let t = self.frames;
        let mut head = Vec::with_capacity(conds.len() * t * HEAD_DIM);
        let mut hands = Vec::new();
        for c in conds {
            let (h, d) = self.prepare(c)?;
            head.extend(h);
            hands.extend(d);
        }
        let b = conds.len();
        let hw = self.hand_input.width(self.hand_dim.width());
        Ok(CondBatch {
            batch: b,
            head: Tensor::from_vec(head, (b, t, HEAD_DIM), &device())?,
            hands: if hw > 0 {
                Some(Tensor::from_vec(hands, (b, t, hw), &device())?)
            } else {
                None
            },
        })
    }

    /// Log-probabilities `[B, T, K]` over clean tokens.
    pub fn forward(&self, z_t: &Tensor, t: &Tensor, cond: &CondBatch) -> Result<Tensor> {
        let (b, n) = z_t.dims2()?;
        if n != self.frames || b != cond.batch || t.dims1()? != b {
            return Err(Error::Shape(format!(
                "tokens [{b}, {n}], steps {:?}, condition batch {}; expected {} frames",
                t.dims(),
                cond.batch,
                self.frames
            )));
        }
        let d = self.arch.d_model;
        let tok = self
            .token_embed
            .as_tensor()
            .index_select(&z_t.flatten_all()?, 0)?
            .reshape((b, n, d))?;
        let mut parts = vec![tok, self.head_embed.forward(&cond.head)?];
        match (&self.hand_embed, &cond.hands) {
            (Some(e), Some(h)) => parts.push(e.forward(h)?),
            (None, None) => {}
            _ => return Err(Error::Shape("hand condition presence does not match the model".into())),
        }
        let mut x = self.fuse.forward(&Tensor::cat(&parts, D::Minus1)?)?;
        let temb = self.step_table.index_select(t, 0)?;
        let temb = self.step_mlp.1.forward(&self.step_mlp.0.forward(&temb)?.silu()?)?;
        let c = temb.silu()?;
        let bias = self
            .relative
            .as_tensor()
            .matmul(&self.relative_onehot)?
            .reshape((1, self.arch.heads, n, n))?;
        for block in &self.blocks {
            x = block.forward(&x, &c, &bias)?;
        }
        let m = self.final_modulation.forward(&c)?.unsqueeze(1)?;
        let x = modulate(&x, &m.narrow(D::Minus1, 0, d)?, &m.narrow(D::Minus1, d, d)?)?;
        Ok(candle_nn::ops::log_softmax(&self.out.forward(&x)?, D::Minus1)?)
    }

    /// Per-position clean-token distributions in f64, `B × T × K` row-major.
    pub fn predict_x0(&self, z_t: &[Vec<usize>], t: usize, cond: &CondBatch) -> Result<Vec<f64>> {
        let b = z_t.len();
        let flat: Vec<u32> = z_t.iter().flatten().map(|&z| z as u32).collect();
        let zt = Tensor::from_vec(flat, (b, self.frames), &device())?;
        let steps = Tensor::from_vec(vec![t as u32; b], b, &device())?;
        Ok(to_f64(&self.forward(&zt, &steps, cond)?)?.into_iter().map(f64::exp).collect())
    }

    /// Objective for one batch: the mean per-step variational term plus
    /// `lambda` times the clean-token cross-entropy. Returns the loss tensor
    /// and its two parts.
    pub fn loss(&self, z0: &[Vec<usize>], z_t: &[Vec<usize>], t: &[usize], cond: &CondBatch, lambda: f64) -> Result<(Tensor, f64, f64)> {
        let b = z0.len();
        let n = self.frames;
        let k = self.codebook_size();
        if z_t.len() != b || t.len() != b || z0.iter().chain(z_t).any(|z| z.len() != n) {
            return Err(Error::Shape("loss batch is ragged".into()));
        }
        let dev = device();
        let zt_flat: Vec<u32> = z_t.iter().flatten().map(|&z| z as u32).collect();
        let zt = Tensor::from_vec(zt_flat, (b, n), &dev)?;
        let steps = Tensor::from_vec(t.iter().map(|&v| v as u32).collect::<Vec<_>>(), b, &dev)?;
        let logp = self.forward(&zt, &steps, cond)?;
        let p = logp.exp()?;

        let mut onehot_t = vec![0f32; b * n * k];
        let mut onehot_0 = vec![0f32; b * n * k];
        let mut is_mask = vec![0f32; b * n];
        let mut q = vec![0f32; b * n * (k + 1)];
        let mut q_log_q = 0.0f64;
        // Per sample: [ᾱ_s, β̄_s, γ̄_s/γ̄_t, ᾱ_t, β̄_t, α_t, β_t, γ_t/γ̄_t, first-step].
        let mut coef = vec![0f32; b * 9];
        for i in 0..b {
            let ti = t[i];
            if ti == 0 || ti > self.steps() {
                return Err(Error::Domain(format!("training step {ti} outside [1, {}]", self.steps())));
            }
            let cs = self.schedule.cumulative(ti - 1)?;
            let ct = self.schedule.cumulative(ti)?;
            let st = self.schedule.step(ti)?;
            let inv_g = 1.0 / ct.gamma.max(LOG_FLOOR);
            let row = [
                cs.alpha,
                cs.beta,
                cs.gamma * inv_g,
                ct.alpha,
                ct.beta.max(LOG_FLOOR),
                st.alpha,
                st.beta,
                st.gamma * inv_g,
                if ti == 1 { 1.0 } else { 0.0 },
            ];
            for (c, v) in coef[i * 9..(i + 1) * 9].iter_mut().zip(row) {
                *c = v as f32;
            }
            for j in 0..n {
                let pos = i * n + j;
                let (a, x) = (z_t[i][j], z0[i][j]);
                if x >= k || a > k {
                    return Err(Error::Domain(format!("token out of range at ({i}, {j})")));
                }
                onehot_0[pos * k + x] = 1.0;
                if a == k {
                    is_mask[pos] = 1.0;
                } else {
                    onehot_t[pos * k + a] = 1.0;
                }
                if ti > 1 {
                    let post = posterior(&self.schedule, a, x, ti, ti - 1)?;
                    for (c, &v) in post.iter().enumerate() {
                        q[pos * (k + 1) + c] = v as f32;
                        if v > 0.0 {
                            q_log_q += v * v.ln();
                        }
                    }
                }
            }
        }
        let coef = Tensor::from_vec(coef, (b, 9), &dev)?;
        let c = |i: usize| -> Result<Tensor> { Ok(coef.narrow(1, i, 1)?.reshape((b, 1, 1))?) };
        let onehot_t = Tensor::from_vec(onehot_t, (b, n, k), &dev)?;
        let onehot_0 = Tensor::from_vec(onehot_0, (b, n, k), &dev)?;
        let is_mask = Tensor::from_vec(is_mask, (b, n, 1), &dev)?;
        let q = Tensor::from_vec(q, (b, n, k + 1), &dev)?;

        // z_t = MASK: p_j = γ_t(ᾱ_s p̃_j + β̄_s)/γ̄_t, p_MASK = γ̄_s/γ̄_t.
        let pm = p.broadcast_mul(&c(0)?)?.broadcast_add(&c(1)?)?.broadcast_mul(&c(7)?)?;
        let pm_mask = c(2)?.broadcast_as((b, n, 1))?;
        // z_t = k: w = p̃/(ᾱ_t[j = k] + β̄_t); p_j = (α_t[j = k] + β_t)(ᾱ_s w_j + β̄_s Σw).
        let w = p.div(&onehot_t.broadcast_mul(&c(3)?)?.broadcast_add(&c(4)?)?)?;
        let w_sum = w.sum_keepdim(D::Minus1)?;
        let hop = onehot_t.broadcast_mul(&c(5)?)?.broadcast_add(&c(6)?)?;
        let pn = hop.mul(&w.broadcast_mul(&c(0)?)?.broadcast_add(&w_sum.broadcast_mul(&c(1)?)?)?)?;
        let keep = (1.0 - &is_mask)?;
        let p_tokens = pm.broadcast_mul(&is_mask)?.add(&pn.broadcast_mul(&keep)?)?;
        let p_mask = pm_mask.mul(&is_mask)?;
        let p_model = Tensor::cat(&[&p_tokens, &p_mask], D::Minus1)?;
        let log_model = p_model.clamp(LOG_FLOOR as f32, f32::MAX)?.log()?;
        let cross = q.mul(&log_model)?.sum(D::Minus1)?.neg()?;

        let nll = logp.mul(&onehot_0)?.sum(D::Minus1)?.neg()?;
        let first = c(8)?.reshape((b, 1))?;
        let later = (1.0 - &first)?;
        let per_pos = nll.broadcast_mul(&first)?.add(&cross.broadcast_mul(&later)?)?;
        let positions = (b * n) as f64;
        let vlb = ((per_pos.sum_all()? + q_log_q)? / positions)?;
        let ce = nll.mean_all()?;
        let total = (&vlb + (&ce * lambda)?)?;
        let scalar = |x: &Tensor| -> Result<f64> { Ok(f64::from(x.to_scalar::<f32>()?)) };
        let (v, e) = (scalar(&vlb)?, scalar(&ce)?);
        Ok((total, v, e))
    }

    /// Generates one token window per condition, walking the reverse chain
    /// from all-MASK down `inference_steps` evenly strided steps.
    pub fn sample<R: Rng>(&self, conds: &[ConditioningVector], inference_steps: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        let total = self.steps();
        if inference_steps == 0 || inference_steps > total || !total.is_multiple_of(inference_steps) {
            return Err(Error::Config(format!(
                "{inference_steps} inference steps do not evenly divide the {total}-step chain"
            )));
        }
        let stride = total / inference_steps;
        let k = self.codebook_size();
        let n = self.frames;
        let refs: Vec<&ConditioningVector> = conds.iter().collect();
        let cond = self.cond_batch(&refs)?;
        let mut z = vec![vec![k; n]; conds.len()];
        let mut t = total;
        while t > 0 {
            let s = t - stride;
            let p = self.predict_x0(&z, t, &cond)?;
            for (i, seq) in z.iter_mut().enumerate() {
                for (j, tok) in seq.iter_mut().enumerate() {
                    let px = &p[(i * n + j) * k..(i * n + j + 1) * k];
                    let rev = reverse_distribution(&self.schedule, *tok, px, t, s)?;
                    *tok = sample_categorical(&rev, rng);
                    if s == 0 && *tok == k {
                        *tok = sample_categorical(px, rng);
                    }
                }
            }
            t = s;
        }
        Ok(z)
    }

    pub fn save(&self, dir: impl AsRef<Path>, history: &[f64]) -> Result<()> {
        let mut w = ArrayWriter::create(dir)?;
        self.store.write(&mut w, "")?;
        let meta = serde_json::json!({
            "arch": self.arch,
            "frames": self.frames,
            "steps": self.steps(),
            "codebook_size": self.codebook_size(),
            "schedule": self.schedule_config,
            "hand_dim": self.hand_dim,
            "hand_input": self.hand_input,
            "normalizer": self.normalizer,
            "history": history,
        });
        w.finish(CHECKPOINT_KIND, meta)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Vec<f64>)> {
        let r = ArrayReader::open(dir)?;
        r.expect_kind(CHECKPOINT_KIND)?;
        let meta = r.meta();
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Config(format!("denoiser checkpoint lacks {k}")));
        let model = Self::new(
            &serde_json::from_value(field("arch")?)?,
            serde_json::from_value(field("frames")?)?,
            serde_json::from_value(field("steps")?)?,
            serde_json::from_value(field("codebook_size")?)?,
            &serde_json::from_value(field("schedule")?)?,
            serde_json::from_value(field("hand_dim")?)?,
            serde_json::from_value(field("hand_input")?)?,
            serde_json::from_value(field("normalizer")?)?,
            0,
        )?;
        model.store.read(&r, "")?;
        let history = serde_json::from_value(field("history")?)?;
        Ok((model, history))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::Normalizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const T: usize = 6;
    const K: usize = 5;

    fn tiny(hand_input: HandInput, seed: u64) -> Denoiser {
        let arch = DenoiserArch {
            d_model: 16,
            heads: 2,
            layers: 2,
            ff_mult: 2,
        };
        let norm = FeatureNormalizer {
            head: Normalizer::identity(HEAD_DIM),
            hands: Normalizer::identity(6),
        };
        Denoiser::new(&arch, T, 10, K, &ScheduleConfig::default(), HandDim::Position, hand_input, norm, seed).unwrap()
    }

    fn condition(seed: u64, hands: bool) -> ConditioningVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        ConditioningVector {
            strategy: hands.then_some(GuidanceStrategy::None),
            frames: T,
            hand_width: if hands { 6 } else { 0 },
            head: v(T * HEAD_DIM),
            hands: if hands { v(T * 6) } else { Vec::new() },
            uncertainty: Vec::new(),
            keep: Vec::new(),
        }
    }

    fn tokens(seed: u64, with_mask: bool) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..T).map(|_| rng.random_range(0..if with_mask { K + 1 } else { K })).collect()
    }

    #[test]
    fn rows_are_distributions_and_batches_do_not_leak() {
        let m = tiny(HandInput::Mean, 3);
        let conds: Vec<_> = (0..3).map(|i| condition(i, true)).collect();
        let z: Vec<_> = (0..3).map(|i| tokens(10 + i, true)).collect();
        let refs: Vec<_> = conds.iter().collect();
        let p = m.predict_x0(&z, 4, &m.cond_batch(&refs).unwrap()).unwrap();
        for row in p.chunks(K) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        let perm = [2, 0, 1];
        let refs2: Vec<_> = perm.iter().map(|&i| &conds[i]).collect();
        let z2: Vec<_> = perm.iter().map(|&i| z[i].clone()).collect();
        let p2 = m.predict_x0(&z2, 4, &m.cond_batch(&refs2).unwrap()).unwrap();
        let per = T * K;
        for (slot, &i) in perm.iter().enumerate() {
            for (a, b) in p2[slot * per..(slot + 1) * per].iter().zip(&p[i * per..(i + 1) * per]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn step_index_changes_the_prediction() {
        let m = tiny(HandInput::None, 5);
        let c = condition(1, false);
        let cb = m.cond_batch(&[&c]).unwrap();
        let z = vec![tokens(2, true)];
        let a = m.predict_x0(&z, 1, &cb).unwrap();
        let b = m.predict_x0(&z, 9, &cb).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "{diff}");
    }

    #[test]
    fn variational_term_matches_explicit_kl() {
        let m = tiny(HandInput::Mean, 7);
        let c = condition(4, true);
        let cb = m.cond_batch(&[&c]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [1usize, 2, 5, 10] {
            let z0 = tokens(t as u64, false);
            let zt = super::super::kernels::forward_corrupt(&m.schedule, &z0, t, &mut rng).unwrap();
            let (_, vlb, ce) = m.loss(&[z0.clone()], &[zt.clone()], &[t], &cb, 0.0).unwrap();
            let p = m.predict_x0(&[zt.clone()], t, &cb).unwrap();
            let mut kl = 0.0;
            let mut nll = 0.0;
            for j in 0..T {
                let px = &p[j * K..(j + 1) * K];
                nll -= px[z0[j]].ln();
                if t == 1 {
                    continue;
                }
                let q = posterior(&m.schedule, zt[j], z0[j], t, t - 1).unwrap();
                let r = reverse_distribution(&m.schedule, zt[j], px, t, t - 1).unwrap();
                for (a, b) in q.iter().zip(&r) {
                    if *a > 0.0 {
                        kl += a * (a / b.max(LOG_FLOOR)).ln();
                    }
                }
            }
            let expect = if t == 1 { nll } else { kl } / T as f64;
            assert!((vlb - expect).abs() < 1e-4 * (1.0 + expect.abs()), "t={t}: {vlb} vs {expect}");
            assert!((ce - nll / T as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn sampler_is_seeded_and_never_emits_mask() {
        let m = tiny(HandInput::Mean, 2);
        let conds = vec![condition(1, true), condition(2, true)];
        let a = m.sample(&conds, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = m.sample(&conds, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let c = m.sample(&conds, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(a.iter().chain(&c).flatten().all(|&z| z < K));
        assert!(m.sample(&conds, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn mismatched_conditions_are_rejected() {
        let m = tiny(HandInput::None, 1);
        assert!(m.cond_batch(&[&condition(1, true)]).is_err());
        let m = tiny(HandInput::MeanAndUncertainty, 1);
        assert!(m.cond_batch(&[&condition(1, true)]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(HandInput::Mean, 11);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), &[1.0, 0.5]).unwrap();
        let (back, hist) = Denoiser::load(dir.path()).unwrap();
        assert_eq!(hist, vec![1.0, 0.5]);
        let c = condition(3, true);
        let z = vec![tokens(4, true)];
        let a = m.predict_x0(&z, 3, &m.cond_batch(&[&c]).unwrap()).unwrap();
        let b = back.predict_x0(&z, 3, &back.cond_batch(&[&c]).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
