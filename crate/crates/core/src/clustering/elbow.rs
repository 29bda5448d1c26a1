use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::kmeans::{cluster, KMeansParams, Points};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Inertia curve over candidate cluster counts and the chosen elbow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowTrace {
    pub candidates: Vec<usize>,
    /// Best inertia `D_v` per candidate.
    pub inertia: Vec<f64>,
    /// `R_v = D_{v-1} - D_v`; absent for the first candidate.
    pub reduction: Vec<Option<f64>>,
    /// `D_{v-1} - 2 D_v + D_{v+1}`; absent at both ends of the range.
    pub curvature: Vec<Option<f64>>,
    pub selected_k: usize,
    pub restarts: usize,
    pub rng_seed: u64,
}

/// Picks the interior candidate with the largest second difference of the
/// inertia curve; ties go to the smallest `v`.
pub fn select_elbow(candidates: &[usize], inertia: &[f64]) -> Result<(usize, Vec<Option<f64>>)> {
    if candidates.len() != inertia.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: inertia.len(),
        });
    }
    if candidates.len() < 3 {
        return Err(Error::invalid(
            "elbow selection needs at least 3 candidate cluster counts",
        ));
    }
    let mut curvature = vec![None; candidates.len()];
    let mut best: Option<(usize, f64)> = None;
    for i in 1..candidates.len() - 1 {
        let c = inertia[i - 1] - 2.0 * inertia[i] + inertia[i + 1];
        curvature[i] = Some(c);
        if best.map_or(true, |(_, b)| c > b) {
            best = Some((i, c));
        }
    }
    Ok((candidates[best.expect("interior exists").0], curvature))
}

/// Clusters at every `v` in `range` and selects `k` at the elbow. The
/// per-candidate seed is `derive_seed(seed, v)`.
pub fn elbow_select(
    points: &Points,
    range: RangeInclusive<usize>,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ElbowTrace> {
    let (lo, hi) = (*range.start(), *range.end());
    if lo < 2 {
        return Err(Error::invalid("elbow range must start at 2 or above"));
    }
    if hi > points.len() {
        return Err(Error::invalid(format!(
            "elbow range upper bound {hi} exceeds point count {}",
            points.len()
        )));
    }
    if hi < lo + 2 {
        return Err(Error::invalid(
            "elbow range needs at least 3 candidate cluster counts",
        ));
    }
    let candidates: Vec<usize> = range.collect();
    let mut inertia = Vec::with_capacity(candidates.len());
    for &v in &candidates {
        inertia.push(cluster(points, v, restarts, derive_seed(seed, v as u64), params)?.inertia);
    }
    let reduction = (0..candidates.len())
        .map(|i| (i > 0).then(|| inertia[i - 1] - inertia[i]))
        .collect();
    let (selected_k, curvature) = select_elbow(&candidates, &inertia)?;
    Ok(ElbowTrace {
        candidates,
        inertia,
        reduction,
        curvature,
        selected_k,
        restarts,
        rng_seed: seed,
    })
}
