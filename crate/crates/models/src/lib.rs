//! Learned components: the uncertainty-aware masked-autoencoder imputer, the
//! VQ-VAE motion tokenizer, the mask-and-replace discrete diffusion model, and
//! uncertainty guidance that connects them.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod imputer;
pub mod nn;
pub mod normalize;
pub mod tokenizer;
pub mod windows;

pub use error::{Error, Result};
