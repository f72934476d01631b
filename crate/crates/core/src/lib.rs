//! Ego-vehicle speed regression from monocular video.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tape`]), the
//! neural-network kernels built on it ([`ops`]), the 3D-CNN with a lane-mask
//! input channel and a tubelet-transformer baseline ([`models`]), data
//! ingestion for synthetic scenes, KITTI raw drives and manifest datasets
//! ([`data`]), and the training and evaluation loops.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
mod linalg;
pub mod models;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{BinaryOp, Fill, Tensor};
