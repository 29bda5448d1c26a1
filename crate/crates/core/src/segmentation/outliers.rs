use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::mask::LabelGrid;
use crate::embedding::{dot_unchecked, EmbeddingGrid};
use crate::error::{Error, Result};
use crate::labels::{ClassId, TissueLabelMap};
use crate::prototype::{PrototypeDictionary, PrototypeEntry};
use crate::rng::stage_rng;

/// A synthetic query problem with known per-cell truth.
#[derive(Debug, Clone)]
pub struct OutlierCase {
    pub grid: EmbeddingGrid,
    pub dict: PrototypeDictionary,
    pub truth: LabelGrid,
    /// Flat indices of the perturbed cells.
    pub perturbed: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct OutlierCaseConfig {
    pub side: usize,
    pub dim: usize,
    pub classes: usize,
    pub regions: usize,
    pub noise: f64,
    pub perturbed_fraction: f64,
}

impl Default for OutlierCaseConfig {
    fn default() -> Self {
        Self {
            side: 32,
            dim: 16,
            classes: 4,
            regions: 8,
            noise: 0.05,
            perturbed_fraction: 0.02,
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot_unchecked(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn nearest(protos: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, p) in protos.iter().enumerate() {
        let s = dot_unchecked(v, p);
        if s > best.0 {
            best = (s, j);
        }
    }
    best.1
}

/// Builds a grid whose unperturbed cells are labeled correctly by their
/// nearest prototype, then pulls a fraction of cells toward a wrong prototype
/// far enough that their nearest prototype changes. One prototype per class.
pub fn outlier_case(cfg: &OutlierCaseConfig, seed: u64) -> Result<OutlierCase> {
    if cfg.classes < 2 || cfg.regions < cfg.classes || cfg.side == 0 || cfg.dim < cfg.classes {
        return Err(Error::invalid("outlier case needs >= 2 classes, regions >= classes, dim >= classes"));
    }
    if !(0.0..1.0).contains(&cfg.perturbed_fraction) {
        return Err(Error::invalid("perturbed fraction must be in [0, 1)"));
    }
    let mut rng = stage_rng(seed);
    let gauss = |rng: &mut crate::rng::StageRng| rng.sample::<f64, _>(StandardNormal);

    let protos: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..cfg.dim).map(|_| gauss(&mut rng)).collect();
            normalize(&mut v);
            v
        })
        .collect();

    let n = cfg.side * cfg.side;
    let centers: Vec<(f64, f64)> = (0..cfg.regions)
        .map(|_| (rng.random_range(0.0..cfg.side as f64), rng.random_range(0.0..cfg.side as f64)))
        .collect();
    let truth: Vec<ClassId> = (0..n)
        .map(|i| {
            let (r, c) = ((i / cfg.side) as f64 + 0.5, (i % cfg.side) as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (s, &(cr, cc)) in centers.iter().enumerate() {
                let d = (r - cr).powi(2) + (c - cc).powi(2);
                if d < best.0 {
                    best = (d, s);
                }
            }
            (best.1 % cfg.classes) as ClassId
        })
        .collect();

    let mut cells = Vec::with_capacity(n);
    for &t in &truth {
        let own = &protos[t as usize];
        loop {
            let mut v: Vec<f64> = own.iter().map(|x| x + cfg.noise * gauss(&mut rng)).collect();
            normalize(&mut v);
            if nearest(&protos, &v) == t as usize {
                cells.push(v);
                break;
            }
        }
    }

    let count = (cfg.perturbed_fraction * n as f64).round() as usize;
    let mut perturbed = sample(&mut rng, n, count).into_vec();
    perturbed.sort_unstable();
    for &i in &perturbed {
        let t = truth[i] as usize;
        let wrong = (t + rng.random_range(1..cfg.classes)) % cfg.classes;
        let mut w = rng.random_range(0.55..0.75);
        loop {
            let mut v: Vec<f64> = protos[t]
                .iter()
                .zip(&protos[wrong])
                .map(|(a, b)| (1.0 - w) * a + w * b + cfg.noise * gauss(&mut rng))
                .collect();
            normalize(&mut v);
            if nearest(&protos, &v) == wrong {
                cells[i] = v;
                break;
            }
            w = (w + 0.05).min(1.0);
        }
    }

    let label_map = TissueLabelMap::numbered(cfg.classes)?;
    let entries = protos
        .into_iter()
        .enumerate()
        .map(|(i, centroid)| PrototypeEntry {
            prototype_id: i,
            class_id: i as ClassId,
            source_cluster: i,
            cluster_size: 0,
            centroid,
        })
        .collect();
    let data = cells.into_iter().flatten().map(|x| x as f32).collect();
    Ok(OutlierCase {
        grid: EmbeddingGrid::new(cfg.side, cfg.side, cfg.dim, data)?,
        dict: PrototypeDictionary::new(cfg.dim, label_map.clone(), entries)?,
        truth: LabelGrid::new(cfg.side, cfg.side, truth, label_map)?,
        perturbed,
    })
}

/// Cells where `pred` differs from `truth`.
pub fn count_errors(pred: &LabelGrid, truth: &LabelGrid) -> usize {
    pred.cells()
        .iter()
        .zip(truth.cells())
        .filter(|(a, b)| a != b)
        .count()
}
