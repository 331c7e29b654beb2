//! The hourglass denoising network and its persistence.

mod block;
pub mod checkpoint;
mod config;
mod hourglass;
pub mod layers;
mod params;
pub mod resample;
pub mod rotary;

pub use block::{attention, block_forward, AttnCache, BlockCache};
pub use config::HourglassConfig;
pub use hourglass::{ForwardCache, HiddenState, HourglassModel};
pub use params::{BlockParams, HourglassParams, LayerNorm, Linear, INIT_STD};
