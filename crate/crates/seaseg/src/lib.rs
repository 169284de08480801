//! Ship segmentation toolkit: corpus I/O, training, TTA inference, and
//! evaluation around the `seaseg-core` numerics.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
