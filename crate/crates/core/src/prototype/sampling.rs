use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringResult;
use crate::embedding::squared_euclidean;
use crate::error::{Error, Result};
use crate::ingest::PatchEmbeddingSet;
use crate::rng::{derive_seed, stage_rng};

pub const DEFAULT_REPRESENTATIVES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// The `t` members nearest the centroid.
    #[default]
    Central,
    /// One random member from each of `t` distance strata, centre to border.
    Equidistant,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(Self::Central),
            "equidistant" => Ok(Self::Equidistant),
            other => Err(Error::invalid(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

/// Members of one cluster as `(distance to centroid, set index)`, ordered by
/// distance then patch id.
fn sorted_members(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    cluster_index: usize,
) -> Result<Vec<(f64, usize)>> {
    if result.assignments.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            found: result.assignments.len(),
        });
    }
    let centroid = result.centroids.get(cluster_index).ok_or(Error::OutOfRange {
        index: cluster_index,
        len: result.k,
    })?;
    let mut members = Vec::new();
    for (i, &a) in result.assignments.iter().enumerate() {
        if a as usize == cluster_index {
            let d = squared_euclidean(&set.records()[i].embedding, centroid)?;
            members.push((d, i));
        }
    }
    if members.is_empty() {
        return Err(Error::invalid(format!("cluster {cluster_index} is empty")));
    }
    let ids: Vec<u64> = set.records().iter().map(|r| r.patch_id).collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(ids[a.1].cmp(&ids[b.1])));
    Ok(members)
}

/// Patch ids of the `min(t, size)` members closest to the cluster centroid,
/// nearest first.
pub fn central_sample(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    cluster_index: usize,
    t: usize,
) -> Result<Vec<u64>> {
    let members = sorted_members(set, result, cluster_index)?;
    Ok(members
        .iter()
        .take(t)
        .map(|&(_, i)| set.records()[i].patch_id)
        .collect())
}

/// Splits the distance-sorted members into `min(t, size)` contiguous strata
/// of near-equal size and draws one member uniformly from each. Stratum `s`
/// covers sorted positions `floor(s n / t) .. floor((s + 1) n / t)`.
pub fn equidistant_sample(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    cluster_index: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    let members = sorted_members(set, result, cluster_index)?;
    let n = members.len();
    let strata = t.min(n);
    let mut rng = stage_rng(seed);
    let mut out = Vec::with_capacity(strata);
    for s in 0..strata {
        let (lo, hi) = (s * n / strata, (s + 1) * n / strata);
        let pick = rng.random_range(lo..hi);
        out.push(set.records()[members[pick].1].patch_id);
    }
    Ok(out)
}

/// Representatives for one cluster under `strategy`. Equidistant draws use
/// `derive_seed(seed, cluster_index)`.
pub fn sample_representatives(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    cluster_index: usize,
    t: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<u64>> {
    if t == 0 {
        return Err(Error::invalid("t must be positive"));
    }
    match strategy {
        SamplingStrategy::Central => central_sample(set, result, cluster_index, t),
        SamplingStrategy::Equidistant => equidistant_sample(
            set,
            result,
            cluster_index,
            t,
            derive_seed(seed, cluster_index as u64),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{lloyd_iterate, KMeansParams, Points};
    use crate::ingest::PatchRecord;

    fn set_1d(values: &[f32]) -> PatchEmbeddingSet {
        PatchEmbeddingSet::new(
            1,
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| PatchRecord {
                    patch_id: 100 + i as u64,
                    source_image_id: "s".into(),
                    origin_x: 0,
                    origin_y: 0,
                    embedding: vec![v],
                    gt_proportions: None,
                    thumbnail: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn single_cluster(set: &PatchEmbeddingSet) -> ClusteringResult {
        let pts = Points::new(1, &set.embedding_matrix()).unwrap();
        let mean = set.records().iter().map(|r| r.embedding[0] as f64).sum::<f64>() / set.len() as f64;
        lloyd_iterate(&pts, vec![vec![mean]], &KMeansParams::default()).unwrap()
    }

    #[test]
    fn central_examples() {
        // collinear points, centroid at the median 2.0
        let set = set_1d(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let r = single_cluster(&set);
        assert_eq!(central_sample(&set, &r, 0, 3).unwrap(), vec![102, 101, 103]);
        assert_eq!(central_sample(&set, &r, 0, 1).unwrap(), vec![102]);
        assert_eq!(central_sample(&set, &r, 0, 10).unwrap().len(), 5);
        assert!(central_sample(&set, &r, 1, 3).is_err());
    }

    #[test]
    fn equidistant_examples() {
        let set = set_1d(&[-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let r = single_cluster(&set);
        // distances: 0 (id 104), 1 (103, 105), 4 (102, 106), 9 (101, 107), 16 (100, 108)
        let thirds: [Vec<u64>; 3] = [vec![104, 103, 105], vec![102, 106, 101], vec![107, 100, 108]];
        for seed in 0..40 {
            let picks = equidistant_sample(&set, &r, 0, 3, seed).unwrap();
            assert_eq!(picks.len(), 3);
            for (p, stratum) in picks.iter().zip(&thirds) {
                assert!(stratum.contains(p), "seed {seed}: {p} not in {stratum:?}");
            }
        }
        let all = equidistant_sample(&set, &r, 0, 9, 1).unwrap();
        assert_eq!(all, central_sample(&set, &r, 0, 9).unwrap());
        let one = equidistant_sample(&set, &r, 0, 1, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(equidistant_sample(&set, &r, 0, 4, 8).unwrap(), equidistant_sample(&set, &r, 0, 4, 8).unwrap());
    }

    #[test]
    fn ties_break_by_patch_id() {
        let set = set_1d(&[1.0, -1.0, 1.0, -1.0]);
        let r = single_cluster(&set);
        assert_eq!(central_sample(&set, &r, 0, 4).unwrap(), vec![100, 101, 102, 103]);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("central".parse::<SamplingStrategy>().unwrap(), SamplingStrategy::Central);
        assert!("random".parse::<SamplingStrategy>().is_err());
        assert!(sample_representatives(&set_1d(&[1.0]), &single_cluster(&set_1d(&[1.0])), 0, 0, SamplingStrategy::Central, 0).is_err());
    }
}
