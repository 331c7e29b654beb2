//! Patch codec: images <-> token grids through a k-means codebook.

mod codebook;
mod dataset;
mod grid;
pub mod io;

pub use codebook::{
    decode_grid, encode_grid, extract_patches, fit_codebook, kmeans_plus_plus_init, Codebook, CodebookFit,
    KMEANS_MAX_ITERS, KMEANS_REL_TOL,
};
pub use dataset::{build_latent_dataset, LatentDataset};
pub use grid::{mask_downsample, ImageGrid, LatentMask, Mask, PixelMask, TokenGrid};
