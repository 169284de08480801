//! Ship-segmentation core: a minimal reverse-mode autodiff tensor engine,
//! the SE U-Net model, IoU-targeting losses, mask/RLE utilities, the
//! instance-matching F2 metric, data-pipeline primitives, and the
//! optimizer/scheduler/SWA machinery.
//!
//! This crate is `no_std`-compatible (with `alloc`); everything touching
//! files, PNG codecs, or the CLI lives in the companion `seaseg` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod d8;
pub mod data;
pub mod elem;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod tta;
pub mod types;

pub use elem::Elem;
pub use tensor::{Gradients, Shape, Tape, TensorError, TensorId};
