//! Non-autoregressive generation over discrete token grids.
//!
//! The pipeline: a k-means patch [`codec`] turns images into token grids, a
//! 2D hourglass transformer ([`model`]) is trained with the step-unrolled
//! denoising objective ([`train`]), and the [`sampler`] generates or inpaints
//! grids starting from uniform noise. [`oracle`] holds brute-force references
//! used to validate the rest.

pub mod codec;
pub mod error;
pub mod eval;
pub mod float;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
