//! Synthetic "tissue" images: a nearest-seed (Voronoi) partition of the canvas
//! where every region takes one class colour, plus per-pixel Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::SourceImage;
use crate::error::{Error, Result};
use crate::labels::{ClassId, TissueLabelMap};
use crate::rng::{derive_seed, stage_rng};
use crate::segmentation::ClassMask;

pub const MAX_CLASSES: usize = 16;

/// Default class colours, in class-id order. The first four are close to
/// equidistant under the block featurizer.
pub const PALETTE: [[u8; 3]; MAX_CLASSES] = [
    [20, 20, 185],
    [185, 20, 20],
    [240, 240, 240],
    [20, 185, 20],
    [230, 210, 60],
    [150, 50, 190],
    [40, 200, 210],
    [240, 140, 30],
    [110, 70, 30],
    [20, 20, 20],
    [240, 120, 190],
    [120, 120, 120],
    [20, 100, 60],
    [170, 220, 150],
    [60, 50, 110],
    [150, 180, 240],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    /// Mean RGB colour.
    pub color: [u8; 3],
    /// Per-channel noise standard deviation in 8-bit units.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetConfig {
    pub image_count: usize,
    /// Side length of the square images, in pixels.
    pub image_size: usize,
    pub class_count: usize,
    pub region_seed_count: usize,
    pub classes: Vec<ClassStyle>,
    pub rng_seed: u64,
}

impl SyntheticDatasetConfig {
    /// Uses the first `class_count` palette colours with a shared noise level.
    pub fn with_palette(
        image_count: usize,
        image_size: usize,
        class_count: usize,
        region_seed_count: usize,
        sigma: f64,
        rng_seed: u64,
    ) -> Self {
        Self {
            image_count,
            image_size,
            class_count,
            region_seed_count,
            classes: PALETTE
                .iter()
                .take(class_count)
                .map(|&color| ClassStyle { color, sigma })
                .collect(),
            rng_seed,
        }
    }

    /// Smallest ratio `|c_i - c_j| / max(sigma_i, sigma_j)` over class pairs
    /// (infinite when there is no noise or a single class).
    pub fn min_separation_ratio(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                let dist = a
                    .color
                    .iter()
                    .zip(&b.color)
                    .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let sigma = a.sigma.max(b.sigma);
                let ratio = if sigma == 0.0 {
                    if dist > 0.0 { f64::INFINITY } else { 0.0 }
                } else {
                    dist / sigma
                };
                best = best.min(ratio);
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_count == 0 {
            return Err(Error::invalid("image_count must be positive"));
        }
        if self.image_size < 32 {
            return Err(Error::invalid("image_size must be at least 32"));
        }
        if self.class_count == 0 || self.class_count > MAX_CLASSES {
            return Err(Error::invalid(format!(
                "class_count must be in 1..={MAX_CLASSES}"
            )));
        }
        if self.classes.len() != self.class_count {
            return Err(Error::invalid(format!(
                "{} class styles for {} classes",
                self.classes.len(),
                self.class_count
            )));
        }
        if self.region_seed_count == 0 {
            return Err(Error::invalid("region_seed_count must be positive"));
        }
        if self.region_seed_count > self.image_size * self.image_size {
            return Err(Error::invalid("more region seeds than pixels"));
        }
        if self.classes.iter().any(|c| !(c.sigma >= 0.0 && c.sigma.is_finite())) {
            return Err(Error::invalid("noise sigma must be finite and non-negative"));
        }
        let ratio = self.min_separation_ratio();
        if ratio <= 4.0 {
            return Err(Error::invalid(format!(
                "class colours must be separated by more than 4 sigma (closest pair: {ratio:.2} sigma)"
            )));
        }
        Ok(())
    }

    pub fn label_map(&self) -> Result<TissueLabelMap> {
        TissueLabelMap::numbered(self.class_count)
    }
}

struct RegionSeed {
    x: i64,
    y: i64,
    class: ClassId,
}

fn generate_one(cfg: &SyntheticDatasetConfig, seed: u64, labels: &TissueLabelMap) -> Result<(SourceImage, ClassMask)> {
    let size = cfg.image_size;
    let mut rng = stage_rng(seed);
    let mut seeds: Vec<RegionSeed> = Vec::with_capacity(cfg.region_seed_count);
    while seeds.len() < cfg.region_seed_count {
        let x = rng.random_range(0..size) as i64;
        let y = rng.random_range(0..size) as i64;
        // distinct positions so every seed owns at least its own pixel
        if seeds.iter().any(|s| s.x == x && s.y == y) {
            continue;
        }
        let class = rng.random_range(0..cfg.class_count) as ClassId;
        seeds.push(RegionSeed { x, y, class });
    }

    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let mut best = (i64::MAX, 0);
            for (i, s) in seeds.iter().enumerate() {
                let d = (s.x - x).pow(2) + (s.y - y).pow(2);
                if d < best.0 {
                    best = (d, i);
                }
            }
            mask.push(seeds[best.1].class);
        }
    }

    let mut pixels = Vec::with_capacity(size * size * 3);
    for &class in &mask {
        let style = &cfg.classes[class as usize];
        for c in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            let v = (style.color[c] as f64 + style.sigma * z).round().clamp(0.0, 255.0);
            pixels.push(v as u8);
        }
    }
    Ok((
        SourceImage::new(size, size, pixels)?,
        ClassMask::new(size, size, mask, labels.clone())?,
    ))
}

/// Images and their ground-truth masks. Image `i` is generated from
/// `derive_seed(rng_seed, i)`, so the output is fully determined by the config.
pub fn generate_synthetic_dataset(
    cfg: &SyntheticDatasetConfig,
) -> Result<(Vec<SourceImage>, Vec<ClassMask>)> {
    cfg.validate()?;
    let labels = cfg.label_map()?;
    let mut images = Vec::with_capacity(cfg.image_count);
    let mut masks = Vec::with_capacity(cfg.image_count);
    for i in 0..cfg.image_count {
        let (img, mask) = generate_one(cfg, derive_seed(cfg.rng_seed, i as u64), &labels)?;
        images.push(img);
        masks.push(mask);
    }
    Ok((images, masks))
}
