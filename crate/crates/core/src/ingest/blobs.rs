//! Gaussian blob embedding sets with centres on the vertices of a regular
//! simplex, so every pair of blob centres is equally far apart.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Distance between any two centres.
    pub separation: f64,
    /// Per-coordinate standard deviation around each centre.
    pub sigma: f64,
}

impl BlobConfig {
    pub fn scatter_ratio(&self) -> f64 {
        self.separation / self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSet {
    pub dim: usize,
    /// Row-major points.
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Centre `i` is `separation / sqrt(2) * e_i`; points are listed blob by blob.
pub fn simplex_blobs(cfg: &BlobConfig, seed: u64) -> Result<BlobSet> {
    if cfg.clusters == 0 || cfg.per_cluster == 0 {
        return Err(Error::invalid("blob counts must be positive"));
    }
    if cfg.dim < cfg.clusters {
        return Err(Error::invalid(format!(
            "{} simplex vertices need dim >= {}",
            cfg.clusters, cfg.clusters
        )));
    }
    if !(cfg.sigma >= 0.0 && cfg.separation > 0.0) {
        return Err(Error::invalid("separation must be positive and sigma non-negative"));
    }
    let mut rng = stage_rng(seed);
    let scale = cfg.separation / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(cfg.clusters * cfg.per_cluster * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.clusters * cfg.per_cluster);
    for c in 0..cfg.clusters {
        for _ in 0..cfg.per_cluster {
            for d in 0..cfg.dim {
                let centre = if d == c { scale } else { 0.0 };
                data.push(centre + cfg.sigma * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
    }
    Ok(BlobSet {
        dim: cfg.dim,
        data,
        labels,
    })
}
