//! Core algorithms for TransONet-style vessel segmentation of CTA volumes.
//!
//! Everything in this crate is a pure function of its inputs and needs only
//! `alloc`. File formats, the command line and wall-clock bookkeeping live in
//! the `transonet` companion crate.
//!
//! Layout of the pipeline:
//!
//! 1. [`volume`]: HU volumes, binary masks and slice normalization.
//! 2. [`phantom`]: synthetic bifurcating-vessel CTA volumes with exact ground truth.
//! 3. [`nn`] and [`model`]: the residual encoder, transformer bridge and decoder,
//!    with hand-written forward and backward passes.
//! 4. [`loss`]: BCE + soft Jaccard training loss, Dice and IoU metrics.
//! 5. [`optim`], [`folds`], [`train`] and [`gradcheck`]: optimization and evaluation.
//! 6. [`tracker`]: the intensity-following tracking baseline.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

extern crate alloc;

pub mod error;
pub mod folds;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod scalar;
pub mod tensor;
pub mod tracker;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
