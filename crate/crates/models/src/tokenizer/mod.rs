//! Discrete motion tokenizer: convolutional encoder, nearest-prototype
//! quantization against an EMA codebook, convolutional decoder.

pub mod loss;
pub mod model;
pub mod quantize;
pub mod train;

pub use loss::{straight_through, vqvae_loss, ReconstructionLoss, VqLossParts, VqLossWeights};
pub use model::{features_to_motion, motion_features, VqArch, VqVae};
pub use quantize::{dead_fraction, vq_quantize, Codebook, EmaConfig};
pub use train::{motion_windows, train_tokenizer, TokenizerConfig, TokenizerReport};
