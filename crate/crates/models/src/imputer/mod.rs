//! Temporal completion of hand trajectories with a masked-autoencoder ensemble.

pub mod ensemble;
pub mod features;
pub mod interpolate;
pub mod loss;
pub mod model;

pub use ensemble::{EnsembleStats, ImputedTrajectory, ImputerConfig, ImputerEnsemble, UncertaintyKind};
pub use features::{attention_mask, tokenize_inputs, ImputerInput, TokenBatch, TokenLayout};
pub use interpolate::interpolate_baseline;
pub use loss::{beta_nll_loss, beta_nll_tensor, beta_nll_term};
pub use model::{MaeArch, MaeMember};
