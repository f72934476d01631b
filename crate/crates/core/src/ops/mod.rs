//! Differentiable kernels recorded on a [`Tape`](crate::tape::Tape).

mod attention;
mod basic;
mod conv;
mod norm;
mod pool;
mod tubelet;

pub use attention::AttentionVars;
pub use conv::{Conv2dGeometry, Conv3dGeometry};
pub use norm::LAYER_NORM_EPS;
pub use pool::Pool3dSpec;
pub use tubelet::{padded_frames, token_count};

