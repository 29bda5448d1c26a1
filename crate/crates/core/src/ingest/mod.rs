//! Image tiling, the built-in block featurizer, synthetic data, and the
//! binary embedding formats.

pub mod blobs;
pub mod featurize;
pub mod formats;
pub mod image;
pub mod patches;
pub mod synth;

pub use blobs::{simplex_blobs, BlobConfig, BlobSet};
pub use featurize::{block_featurize, patch_embed, DEFAULT_BLOCK, FEATURE_DIM};
pub use image::SourceImage;
pub use patches::{
    class_proportions, crop_patches, subsample_patches, PatchEmbeddingSet, PatchGeometry,
    PatchRecord, DEFAULT_PATCH_SIZE,
};
pub use synth::{generate_synthetic_dataset, ClassStyle, SyntheticDatasetConfig};
