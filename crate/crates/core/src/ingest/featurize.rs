//! Block colour/texture descriptor used as a lightweight encoder.
//!
//! Each `block x block` cell is described by 31 statistics, zero-padded to
//! [`FEATURE_DIM`] and L2-normalized:
//!
//! | offset | len | feature |
//! |-------:|----:|---------|
//! | 0  | 3  | per-channel mean, scaled to `[0, 1]` |
//! | 3  | 3  | per-channel population standard deviation, scaled to `[0, 1]` |
//! | 6  | 24 | 8-bin histogram per channel (bin = value >> 5), as fractions; R then G then B |
//! | 30 | 1  | gradient energy: mean squared forward difference (x and y, all channels) / 255^2 |
//! | 31 | 33 | zero |

use rayon::prelude::*;

use super::image::SourceImage;
use super::patches::PatchGeometry;
use crate::embedding::{l2_normalize, EmbeddingGrid};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 64;
pub const DEFAULT_BLOCK: usize = 32;
const HIST_BINS: usize = 8;

/// Unnormalized descriptor of the `block x block` window at `(x0, y0)`.
pub fn raw_block_descriptor(image: &SourceImage, x0: usize, y0: usize, block: usize) -> Vec<f64> {
    let n = (block * block) as f64;
    let mut sum = [0.0f64; 3];
    let mut hist = [[0u32; HIST_BINS]; 3];
    let mut grad = 0.0f64;
    for y in y0..y0 + block {
        for x in x0..x0 + block {
            let p = image.pixel(x, y);
            for c in 0..3 {
                sum[c] += p[c] as f64;
                hist[c][(p[c] >> 5) as usize] += 1;
            }
            if x + 1 < x0 + block {
                let q = image.pixel(x + 1, y);
                for c in 0..3 {
                    let d = q[c] as f64 - p[c] as f64;
                    grad += d * d;
                }
            }
            if y + 1 < y0 + block {
                let q = image.pixel(x, y + 1);
                for c in 0..3 {
                    let d = q[c] as f64 - p[c] as f64;
                    grad += d * d;
                }
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut var = [0.0f64; 3];
    for y in y0..y0 + block {
        for x in x0..x0 + block {
            let p = image.pixel(x, y);
            for c in 0..3 {
                let d = p[c] as f64 - mean[c];
                var[c] += d * d;
            }
        }
    }

    let mut out = Vec::with_capacity(FEATURE_DIM);
    out.extend(mean.iter().map(|m| m / 255.0));
    out.extend(var.iter().map(|v| (v / n).sqrt() / 255.0));
    for h in &hist {
        out.extend(h.iter().map(|&count| count as f64 / n));
    }
    let pairs = if block > 1 { 2 * block * (block - 1) * 3 } else { 0 };
    out.push(if pairs > 0 {
        grad / pairs as f64 / (255.0 * 255.0)
    } else {
        0.0
    });
    out.resize(FEATURE_DIM, 0.0);
    out
}

/// Unit-norm descriptor of one block.
pub fn block_descriptor(image: &SourceImage, x0: usize, y0: usize, block: usize) -> Vec<f64> {
    // the histogram part always has norm >= 1/sqrt(8) per channel
    l2_normalize(&raw_block_descriptor(image, x0, y0, block)).expect("histogram is never zero")
}

fn check_block(image: &SourceImage, block: usize) -> Result<()> {
    if block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    if image.width() < block || image.height() < block {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than one {block}px block",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Dense grid of block descriptors; trailing partial blocks are discarded.
pub fn block_featurize(image: &SourceImage, block: usize) -> Result<EmbeddingGrid> {
    check_block(image, block)?;
    let rows = image.height() / block;
    let cols = image.width() / block;
    let data: Vec<f32> = (0..rows * cols)
        .into_par_iter()
        .flat_map_iter(|cell| {
            let (r, c) = (cell / cols, cell % cols);
            block_descriptor(image, c * block, r * block, block)
                .into_iter()
                .map(|v| v as f32)
        })
        .collect();
    EmbeddingGrid::new(rows, cols, FEATURE_DIM, data)
}

fn check_geometry(image: &SourceImage, patch: &PatchGeometry, block: usize) -> Result<()> {
    check_block(image, block)?;
    if patch.size == 0 || patch.size % block != 0 {
        return Err(Error::invalid(format!(
            "patch size {} is not a multiple of block {block}",
            patch.size
        )));
    }
    if patch.x + patch.size > image.width() || patch.y + patch.size > image.height() {
        return Err(Error::invalid(format!(
            "patch {}px at ({}, {}) exceeds {}x{} image",
            patch.size,
            patch.x,
            patch.y,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Mean of the unit-norm block descriptors covering the patch, before
/// renormalization.
pub fn mean_block_descriptor(
    image: &SourceImage,
    patch: &PatchGeometry,
    block: usize,
) -> Result<Vec<f64>> {
    check_geometry(image, patch, block)?;
    let per_side = patch.size / block;
    let mut acc = vec![0.0f64; FEATURE_DIM];
    for by in 0..per_side {
        for bx in 0..per_side {
            let d = block_descriptor(image, patch.x + bx * block, patch.y + by * block, block);
            for (a, v) in acc.iter_mut().zip(&d) {
                *a += v;
            }
        }
    }
    let count = (per_side * per_side) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Patch embedding: average-pool the block descriptors inside the patch and
/// L2-normalize.
pub fn patch_embed(image: &SourceImage, patch: &PatchGeometry, block: usize) -> Result<Vec<f32>> {
    let mean = mean_block_descriptor(image, patch, block)?;
    Ok(l2_normalize(&mean)?.into_iter().map(|v| v as f32).collect())
}

/// Same pooling as [`patch_embed`], reading descriptors from an already
/// computed grid. The patch must be aligned to the grid's blocks.
pub fn patch_embed_from_grid(
    grid: &EmbeddingGrid,
    patch: &PatchGeometry,
    block: usize,
) -> Result<Vec<f32>> {
    if patch.x % block != 0 || patch.y % block != 0 || patch.size % block != 0 || patch.size == 0
    {
        return Err(Error::invalid("patch not aligned to the block grid"));
    }
    let (c0, r0, per_side) = (patch.x / block, patch.y / block, patch.size / block);
    if r0 + per_side > grid.height() || c0 + per_side > grid.width() {
        return Err(Error::OutOfRange {
            index: (r0 + per_side).max(c0 + per_side),
            len: grid.height().min(grid.width()),
        });
    }
    let mut acc = vec![0.0f64; grid.dim()];
    for r in r0..r0 + per_side {
        for c in c0..c0 + per_side {
            for (a, v) in acc.iter_mut().zip(grid.cell(r, c)) {
                *a += *v as f64;
            }
        }
    }
    let count = (per_side * per_side) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(l2_normalize(&acc)?.into_iter().map(|v| v as f32).collect())
}
