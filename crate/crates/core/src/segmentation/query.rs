use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::LabelGrid;
use crate::clustering::{cluster, KMeansParams, Points};
use crate::embedding::{dot_unchecked, squared_norm, EmbeddingGrid};
use crate::error::{Error, Result};
use crate::labels::ClassId;
use crate::prototype::PrototypeDictionary;

pub const DEFAULT_GAMMA: f64 = 5.0;
pub const DEFAULT_CQ_RESTARTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqConfig {
    pub gamma: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for CqConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            restarts: DEFAULT_CQ_RESTARTS,
            rng_seed: 0,
        }
    }
}

impl CqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma = {} must be >= 1", self.gamma)));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Dq,
    #[default]
    Cq,
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dq" => Ok(Self::Dq),
            "cq" => Ok(Self::Cq),
            other => Err(Error::invalid(format!("unknown query mode {other:?}"))),
        }
    }
}

/// Prototype lookup with cached norms.
struct Nearest<'a> {
    dict: &'a PrototypeDictionary,
    norms: Vec<f64>,
}

impl<'a> Nearest<'a> {
    fn new(dict: &'a PrototypeDictionary) -> Result<Self> {
        dict.validate()?;
        let norms = dict
            .entries
            .iter()
            .map(|e| squared_norm(&e.centroid).sqrt())
            .collect();
        Ok(Self { dict, norms })
    }

    /// Index of the entry with maximal cosine similarity; ties go to the
    /// first entry.
    fn index<T: crate::embedding::Coord>(&self, v: &[T]) -> Result<usize> {
        let vn = squared_norm(v).sqrt();
        if vn == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (j, (e, pn)) in self.dict.entries.iter().zip(&self.norms).enumerate() {
            let s = dot_unchecked(v, &e.centroid) / (vn * pn);
            if s > best.0 {
                best = (s, j);
            }
        }
        Ok(best.1)
    }

    fn class<T: crate::embedding::Coord>(&self, v: &[T]) -> Result<ClassId> {
        Ok(self.dict.entries[self.index(v)?].class_id)
    }
}

fn check_dims(grid: &EmbeddingGrid, dict: &PrototypeDictionary) -> Result<()> {
    if grid.dim() != dict.dim {
        return Err(Error::DimensionMismatch {
            expected: dict.dim,
            found: grid.dim(),
        });
    }
    Ok(())
}

/// Labels every cell with the class of its cosine-nearest prototype.
pub fn direct_query(grid: &EmbeddingGrid, dict: &PrototypeDictionary) -> Result<LabelGrid> {
    check_dims(grid, dict)?;
    let nearest = Nearest::new(dict)?;
    let cells = grid
        .data()
        .par_chunks_exact(grid.dim())
        .map(|c| nearest.class(c))
        .collect::<Result<Vec<_>>>()?;
    LabelGrid::new(grid.height(), grid.width(), cells, dict.label_map.clone())
}

pub fn distinct_tissue_count(grid: &LabelGrid) -> usize {
    grid.cells().iter().collect::<BTreeSet<_>>().len()
}

/// Number of clusters used by [`cluster_then_query`]:
/// `min(ceil(gamma * d), distinct cell vectors)`.
pub fn cq_cluster_count(gamma: f64, d: usize, distinct_cells: usize) -> usize {
    ((gamma * d as f64).ceil() as usize).clamp(1, distinct_cells.max(1))
}

/// Clusters the cells into `gamma * d` groups, `d` being the number of
/// classes in the direct-query result, and labels each group by the
/// prototype nearest its centroid.
pub fn cluster_then_query(
    grid: &EmbeddingGrid,
    dict: &PrototypeDictionary,
    cfg: &CqConfig,
) -> Result<LabelGrid> {
    cfg.validate()?;
    let dq = direct_query(grid, dict)?;
    let d = distinct_tissue_count(&dq);
    let points = Points::new(grid.dim(), grid.data())?;
    let m = cq_cluster_count(cfg.gamma, d, points.distinct_count());
    let result = cluster(&points, m, cfg.restarts, cfg.rng_seed, &KMeansParams::default())?;
    let nearest = Nearest::new(dict)?;
    let mut cluster_class = Vec::with_capacity(m);
    for c in &result.centroids {
        // a centroid of opposing unit vectors can vanish; its members keep
        // their direct-query labels
        cluster_class.push(match nearest.class(c) {
            Ok(class) => Some(class),
            Err(Error::ZeroNorm) => None,
            Err(e) => return Err(e),
        });
    }
    let cells = result
        .assignments
        .iter()
        .zip(dq.cells())
        .map(|(&a, &fallback)| cluster_class[a as usize].unwrap_or(fallback))
        .collect();
    LabelGrid::new(grid.height(), grid.width(), cells, dict.label_map.clone())
}

pub fn query(
    grid: &EmbeddingGrid,
    dict: &PrototypeDictionary,
    mode: QueryMode,
    cfg: &CqConfig,
) -> Result<LabelGrid> {
    match mode {
        QueryMode::Dq => direct_query(grid, dict),
        QueryMode::Cq => cluster_then_query(grid, dict, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::TissueLabelMap;
    use crate::prototype::PrototypeEntry;
    use crate::rng::stage_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn dict(centroids: Vec<Vec<f64>>, classes: &[ClassId], n_classes: usize) -> PrototypeDictionary {
        let dim = centroids[0].len();
        let entries = centroids
            .into_iter()
            .zip(classes)
            .enumerate()
            .map(|(i, (c, &class_id))| PrototypeEntry {
                prototype_id: i,
                class_id,
                source_cluster: i,
                cluster_size: 1,
                centroid: unit(c),
            })
            .collect();
        PrototypeDictionary::new(dim, TissueLabelMap::numbered(n_classes).unwrap(), entries).unwrap()
    }

    fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        unit((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    }

    fn brute_force(grid: &EmbeddingGrid, d: &PrototypeDictionary) -> Vec<ClassId> {
        grid.data()
            .chunks(grid.dim())
            .map(|cell| {
                let cn = cell.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                let mut best = (f64::MIN, usize::MAX);
                for (j, e) in d.entries.iter().enumerate() {
                    let pn = e.centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let s = cell.iter().zip(&e.centroid).map(|(&a, b)| a as f64 * b).sum::<f64>() / (cn * pn);
                    if s > best.0 + 1e-12 || (best.1 == usize::MAX) {
                        best = (s, j);
                    }
                }
                d.entries[best.1].class_id
            })
            .collect()
    }

    #[test]
    fn dq_examples() {
        let d = dict(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], &[2, 0, 1], 3);
        let grid = EmbeddingGrid::new(1, 3, 3, vec![0.0, 0.0, 1.0, 0.9, 0.1, 0.0, 0.2, 0.7, 0.1]).unwrap();
        assert_eq!(direct_query(&grid, &d).unwrap().cells(), &[1, 2, 0]);

        let single = dict(vec![vec![1.0, 1.0, 0.0]], &[0], 1);
        let lg = direct_query(&grid, &single).unwrap();
        assert!(lg.cells().iter().all(|&c| c == 0));

        // equal similarity to prototypes 0 and 1 goes to prototype 0
        let tie = EmbeddingGrid::new(1, 1, 3, vec![1.0, 1.0, 0.0]).unwrap();
        let d2 = dict(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], &[1, 0], 2);
        assert_eq!(direct_query(&tie, &d2).unwrap().cells(), &[1]);

        let wrong_dim = EmbeddingGrid::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(direct_query(&wrong_dim, &d), Err(Error::DimensionMismatch { .. })));
        let zero = EmbeddingGrid::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(direct_query(&zero, &d), Err(Error::ZeroNorm)));
    }

    #[test]
    fn dq_matches_brute_force() {
        let mut rng = stage_rng(7);
        for case in 0..30 {
            let dim = rng.random_range(2..12);
            let n_proto = rng.random_range(1..40);
            let classes: Vec<ClassId> = (0..n_proto).map(|_| rng.random_range(0..5)).collect();
            let protos = (0..n_proto).map(|_| random_unit(&mut rng, dim)).collect();
            let d = dict(protos, &classes, 5);
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
            let data: Vec<f32> = (0..h * w).flat_map(|_| random_unit(&mut rng, dim)).map(|x| x as f32).collect();
            let grid = EmbeddingGrid::new(h, w, dim, data).unwrap();
            assert_eq!(direct_query(&grid, &d).unwrap().cells(), brute_force(&grid, &d).as_slice(), "case {case}");
        }
    }

    #[test]
    fn distinct_count_examples() {
        let labels = TissueLabelMap::numbered(4).unwrap();
        assert_eq!(distinct_tissue_count(&LabelGrid::new(2, 2, vec![1; 4], labels.clone()).unwrap()), 1);
        assert_eq!(distinct_tissue_count(&LabelGrid::new(1, 5, vec![0, 2, 3, 2, 0], labels).unwrap()), 3);
        assert_eq!(cq_cluster_count(5.0, 4, 1000), 20);
        assert_eq!(cq_cluster_count(5.0, 4, 7), 7);
        assert_eq!(cq_cluster_count(1.5, 3, 100), 5);
    }

    #[test]
    fn cq_uniform_grid_equals_dq() {
        let d = dict(vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], 2);
        let grid = EmbeddingGrid::new(3, 3, 2, [0.6f32, 0.8].repeat(9)).unwrap();
        let cq = cluster_then_query(&grid, &d, &CqConfig::default()).unwrap();
        assert_eq!(cq, direct_query(&grid, &d).unwrap());
        assert!(cq.cells().iter().all(|&c| c == 1));
    }

    #[test]
    fn cq_config_validation() {
        let bad = CqConfig { gamma: 0.5, ..CqConfig::default() };
        assert!(bad.validate().is_err());
        let nan = CqConfig { gamma: f64::NAN, ..CqConfig::default() };
        assert!(nan.validate().is_err());
        assert_eq!("cq".parse::<QueryMode>().unwrap(), QueryMode::Cq);
        assert!("xq".parse::<QueryMode>().is_err());
    }

    #[test]
    fn cq_opposing_cells_fall_back_to_dq() {
        // two antipodal cells, gamma * d forced to 1 cluster: centroid is zero
        let d = dict(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], &[0, 1], 2);
        let grid = EmbeddingGrid::new(1, 2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let nearest = Nearest::new(&d).unwrap();
        assert!(matches!(nearest.class(&[0.0f64, 0.0]), Err(Error::ZeroNorm)));
        let cq = cluster_then_query(&grid, &d, &CqConfig { gamma: 1.0, ..CqConfig::default() }).unwrap();
        assert_eq!(cq.cells(), &[0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn cq_degenerates_to_dq(seed in any::<u64>(), cells in 2usize..30, n_proto in 1usize..8) {
            let mut rng = stage_rng(seed);
            let dim = 6;
            let protos: Vec<Vec<f64>> = (0..n_proto).map(|_| random_unit(&mut rng, dim)).collect();
            let classes: Vec<ClassId> = (0..n_proto as ClassId).collect();
            let d = dict(protos, &classes, n_proto);
            let data: Vec<f32> = (0..cells).flat_map(|_| random_unit(&mut rng, dim)).map(|x| x as f32).collect();
            let grid = EmbeddingGrid::new(1, cells, dim, data).unwrap();
            let cfg = CqConfig { gamma: cells as f64, restarts: 2, rng_seed: seed };
            let cq = cluster_then_query(&grid, &d, &cfg).unwrap();
            let dq = direct_query(&grid, &d).unwrap();
            prop_assert_eq!(cq.cells(), dq.cells());
            for c in cq.cells() {
                prop_assert!(d.entries.iter().any(|e| e.class_id == *c));
            }
        }
    }
}
