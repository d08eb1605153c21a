//! One masked-autoencoder ensemble member.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};
use sparsepose_core::synth::tracking::HEAD_DIM;

use super::features::{TokenBatch, TokenLayout, SLOTS_PER_FRAME};
use crate::error::{Error, Result};
use crate::nn::{softplus, Block, LayerNorm, Linear, ParamStore};

/// Added to the softplus output so variances stay strictly positive.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// softplus⁻¹(1): initial variance head bias.
const VARIANCE_BIAS_INIT: f32 = 0.541_324_8;
/// Key bias for slots the encoder must ignore.
const MASKED_KEY_BIAS: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaeArch {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_mult: usize,
}

impl Default for MaeArch {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            encoder_layers: 4,
            decoder_layers: 2,
            ff_mult: 4,
        }
    }
}

#[derive(Debug)]
pub struct MaeMember {
    pub layout: TokenLayout,
    pub store: ParamStore,
    head_embed: Linear,
    hand_embed: Linear,
    /// `[3, D]`: head, left, right.
    slot_type: Var,
    encoder: Vec<Block>,
    encoder_norm: LayerNorm,
    mask_token: Var,
    decoder: Vec<Block>,
    decoder_norm: LayerNorm,
    mean_head: Linear,
    var_head: Linear,
}

impl MaeMember {
    pub fn new(arch: &MaeArch, frames: usize, hand_width: usize, seed: u64) -> Result<Self> {
        if arch.encoder_layers == 0 || arch.ff_mult == 0 {
            return Err(Error::Config("the encoder needs at least one layer and a positive ff_mult".into()));
        }
        let d = arch.d_model;
        let layout = TokenLayout::new(frames, d, hand_width)?;
        let mut ps = ParamStore::new(seed);
        let head_embed = Linear::new(&mut ps, "embed.head", HEAD_DIM, d)?;
        let hand_embed = Linear::new(&mut ps, "embed.hand", hand_width, d)?;
        let slot_type = ps.normal("embed.slot_type", &[SLOTS_PER_FRAME, d], 0.02)?;
        let encoder = (0..arch.encoder_layers)
            .map(|i| Block::new(&mut ps, &format!("enc.{i}"), d, arch.heads, arch.ff_mult * d))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(&mut ps, "enc.norm", d)?;
        let mask_token = ps.normal("dec.mask_token", &[d], 0.02)?;
        let decoder = (0..arch.decoder_layers)
            .map(|i| Block::new(&mut ps, &format!("dec.{i}"), d, arch.heads, arch.ff_mult * d))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&mut ps, "dec.norm", d)?;
        let mean_head = Linear::with_std(&mut ps, "out.mean", d, hand_width, 0.02)?;
        let var_head = Linear::with_std(&mut ps, "out.var", d, hand_width, 0.02)?;
        if let Some(b) = &var_head.b {
            b.set(&Tensor::full(VARIANCE_BIAS_INIT, hand_width, b.device())?)?;
        }
        Ok(Self {
            layout,
            store: ps,
            head_embed,
            hand_embed,
            slot_type,
            encoder,
            encoder_norm,
            mask_token,
            decoder,
            decoder_norm,
            mean_head,
            var_head,
        })
    }

    fn check(&self, x: &TokenBatch) -> Result<()> {
        if x.frames != self.layout.frames || x.hand_width != self.layout.hand_width {
            return Err(Error::Shape(format!(
                "batch of {}-frame windows with hand width {}, model expects {} and {}",
                x.frames, x.hand_width, self.layout.frames, self.layout.hand_width
            )));
        }
        Ok(())
    }

    /// Encoder output `[B, 3T, D]`. Slots with `visible = 0` have their content
    /// zeroed and receive no attention from any query.
    pub fn encode(&self, x: &TokenBatch) -> Result<Tensor> {
        self.check(x)?;
        let (b, t, d) = (x.batch, x.frames, self.layout.d_model);
        let head = self.head_embed.forward(&x.head)?.unsqueeze(2)?;
        let hands = self.hand_embed.forward(&x.hands)?;
        let tokens = Tensor::cat(&[&head, &hands], 2)?
            .broadcast_add(self.slot_type.as_tensor())?
            .reshape((b, SLOTS_PER_FRAME * t, d))?;
        let vis = x.visible.unsqueeze(2)?;
        let tokens = tokens.broadcast_mul(&vis)?.broadcast_add(&self.layout.positional)?;
        let bias = x
            .visible
            .affine(MASKED_KEY_BIAS, -MASKED_KEY_BIAS)?
            .reshape((b, 1, 1, SLOTS_PER_FRAME * t))?;
        let mut h = tokens;
        for block in &self.encoder {
            h = block.forward(&h, Some(&bias))?;
        }
        self.encoder_norm.forward(&h)
    }

    /// Mean and variance `[B, T, 2, w]` in normalized units, for every frame.
    pub fn forward(&self, x: &TokenBatch) -> Result<(Tensor, Tensor)> {
        let enc = self.encode(x)?;
        let (b, t, d) = (x.batch, x.frames, self.layout.d_model);
        let vis = x.visible.unsqueeze(2)?;
        let keep = enc.broadcast_mul(&vis)?;
        let fill = vis.affine(-1.0, 1.0)?.broadcast_mul(&self.mask_token.as_tensor().reshape((1, 1, d))?)?;
        let mut h = (keep + fill)?.broadcast_add(&self.layout.positional)?;
        for block in &self.decoder {
            h = block.forward(&h, None)?;
        }
        let h = self.decoder_norm.forward(&h)?;
        let hands = h.reshape((b, t, SLOTS_PER_FRAME, d))?.narrow(2, 1, 2)?.contiguous()?;
        let mean = self.mean_head.forward(&hands)?;
        let var = (softplus(&self.var_head.forward(&hands)?)? + VARIANCE_FLOOR)?;
        Ok((mean, var))
    }

    #[cfg(test)]
    pub(crate) fn var_head(&self) -> &Linear {
        &self.var_head
    }
}
