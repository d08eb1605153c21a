pub mod denoiser;
pub mod kernels;
pub mod schedule;
pub mod train;

pub use denoiser::{CondBatch, Denoiser, DenoiserArch, HandInput};
pub use kernels::{forward_corrupt, posterior, reverse_distribution, sample_categorical};
pub use schedule::{KernelParams, ScheduleConfig, TransitionSchedule};
pub use train::{denoiser_examples, train_denoiser, DenoiserConfig, DenoiserExample};
