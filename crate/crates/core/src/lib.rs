//! Learning class-specific training-time augmentation jointly with
//! test-time augmentation for segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`net`], [`loss`]: a small convolutional segmenter with
//!   explicit forward and backward passes;
//! - [`transforms`]: the training-time cascade and the test-time pool;
//! - [`policy`]: logit tables, Gumbel-Softmax draws and the normalized
//!   policy updates;
//! - [`meta`]: the one-step bilevel training loop;
//! - [`tea`]: top-z test-time aggregation;
//! - [`data`] and [`metrics`]: synthetic tasks, persistence, evaluation.

pub mod data;
pub mod error;
pub mod loss;
pub mod meta;
pub mod metrics;
pub mod net;
pub mod policy;
pub mod rng;
pub mod tea;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use loss::LossKind;
pub use net::{GradSet, SegNet};
pub use tensor::{LabelMap, Tensor};
