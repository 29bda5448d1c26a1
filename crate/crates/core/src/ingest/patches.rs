use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::image::SourceImage;
use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::segmentation::{ClassId, ClassMask};

pub const DEFAULT_PATCH_SIZE: usize = 128;

/// Square window in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// One cropped patch and, once featurized, its embedding.
///
/// Serializes to the embedding-set sidecar schema; the embedding itself lives
/// in the binary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: u64,
    pub source_image_id: String,
    #[serde(rename = "x")]
    pub origin_x: u32,
    #[serde(rename = "y")]
    pub origin_y: u32,
    #[serde(skip)]
    pub embedding: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_proportions: Option<BTreeMap<ClassId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail: Option<String>,
}

impl PatchRecord {
    pub fn geometry(&self, size: usize) -> PatchGeometry {
        PatchGeometry {
            x: self.origin_x as usize,
            y: self.origin_y as usize,
            size,
        }
    }

    fn validate_proportions(&self) -> Result<()> {
        if let Some(props) = &self.gt_proportions {
            let mut total = 0.0;
            for (&class, &p) in props {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "patch {}: proportion {p} for class {class} outside [0, 1]",
                        self.patch_id
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "patch {}: proportions sum to {total}",
                    self.patch_id
                )));
            }
        }
        Ok(())
    }
}

/// Non-overlapping row-major tiling of `image` into `patch_size` squares.
/// Remainder pixels past the last full patch are dropped.
pub fn crop_patches(
    image: &SourceImage,
    image_id: &str,
    patch_size: usize,
    first_id: u64,
) -> Result<Vec<PatchRecord>> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if image.width() < patch_size || image.height() < patch_size {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than one {patch_size}px patch",
            image.width(),
            image.height()
        )));
    }
    let (rows, cols) = (image.height() / patch_size, image.width() / patch_size);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(PatchRecord {
                patch_id: first_id + out.len() as u64,
                source_image_id: image_id.to_owned(),
                origin_x: (c * patch_size) as u32,
                origin_y: (r * patch_size) as u32,
                embedding: Vec::new(),
                gt_proportions: None,
                thumbnail: None,
            });
        }
    }
    Ok(out)
}

/// Per-class pixel fractions of a window of a ground-truth mask.
pub fn class_proportions(mask: &ClassMask, geom: &PatchGeometry) -> Result<BTreeMap<ClassId, f64>> {
    if geom.size == 0 || geom.x + geom.size > mask.width() || geom.y + geom.size > mask.height() {
        return Err(Error::invalid("patch exceeds mask bounds"));
    }
    let mut counts: BTreeMap<ClassId, u64> = BTreeMap::new();
    for y in geom.y..geom.y + geom.size {
        for x in geom.x..geom.x + geom.size {
            *counts.entry(mask.get(x, y)).or_default() += 1;
        }
    }
    let total = (geom.size * geom.size) as f64;
    Ok(counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / total))
        .collect())
}

/// Embedded patch corpus with a common dimension and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSet {
    dim: usize,
    records: Vec<PatchRecord>,
}

impl PatchEmbeddingSet {
    pub fn new(dim: usize, records: Vec<PatchRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            if r.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("patch embedding"));
            }
            if !seen.insert(r.patch_id) {
                return Err(Error::invalid(format!("duplicate patch_id {}", r.patch_id)));
            }
            r.validate_proportions()?;
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Option<&PatchRecord> {
        self.records.get(index)
    }

    pub fn position_of(&self, patch_id: u64) -> Option<usize> {
        self.records.iter().position(|r| r.patch_id == patch_id)
    }

    pub fn into_records(self) -> Vec<PatchRecord> {
        self.records
    }

    /// Embeddings as a row-major `len x dim` matrix.
    pub fn embedding_matrix(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for r in &self.records {
            out.extend_from_slice(&r.embedding);
        }
        out
    }
}

/// Uniform sample of `m` records without replacement. Selected records keep
/// their original relative order.
pub fn subsample_patches(set: &PatchEmbeddingSet, m: usize, seed: u64) -> Result<PatchEmbeddingSet> {
    let n = set.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "subsample size {m} must be in 1..={n}"
        )));
    }
    let mut rng = stage_rng(seed);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let records = picked.into_iter().map(|i| set.records[i].clone()).collect();
    PatchEmbeddingSet::new(set.dim, records)
}
