//! Kinematics, metrics, synthetic motion data and hand geometry for
//! reconstructing full-body motion from head tracking and sparse hand views.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod hand;
pub mod metrics;
pub mod motion;
pub mod rotation;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::{compute_metrics, MetricRecord};
pub use motion::{forward_kinematics, MotionSequence, Pose};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, Rot6d};
pub use skeleton::{Region, Skeleton};
pub use synth::tracking::{HandDim, HandSide, TrackingSignal};
pub use synth::visibility::VisibilityMask;
