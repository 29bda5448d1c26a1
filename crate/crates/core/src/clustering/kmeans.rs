use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{dot_unchecked, squared_euclidean_unchecked, squared_norm, Coord};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stage_rng};

/// Row-major point matrix with cached squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Points {
    pub fn new<T: Coord>(dim: usize, data: &[T]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        let data: Vec<f64> = data.iter().map(|v| v.to_f64()).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("points"));
        }
        let sq_norms = data.chunks_exact(dim).map(squared_norm).collect();
        Ok(Self {
            dim,
            data,
            sq_norms,
        })
    }

    pub fn from_rows<T: Coord, R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend(r.iter().map(|v| v.to_f64()));
        }
        Self::new(dim, &flat)
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Number of distinct rows (bitwise comparison).
    pub fn distinct_count(&self) -> usize {
        let mut keys: Vec<Vec<u64>> = self
            .rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }

    fn select(&self, order: &[usize]) -> Points {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        let mut sq_norms = Vec::with_capacity(order.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
            sq_norms.push(self.sq_norms[i]);
        }
        Points {
            dim: self.dim,
            data,
            sq_norms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// D^2-weighted seeding.
    #[default]
    PlusPlus,
    /// `k` distinct points chosen uniformly.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop when `(D_prev - D) <= tol * D_prev`.
    pub tol: f64,
    pub init: Initialization,
    /// At a Lloyd fixed point, move single points between clusters while a
    /// move lowers inertia (Hartigan transfers), then resume Lloyd.
    #[serde(default = "default_transfers")]
    pub transfers: bool,
}

fn default_transfers() -> bool {
    true
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            init: Initialization::PlusPlus,
            transfers: true,
        }
    }
}

impl KMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Initial centroids plus the indices of the points they were copied from.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeding {
    pub centroids: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
    /// Set when a centroid had to duplicate an already chosen location.
    pub duplicates: bool,
}

fn check_k(points: &Points, k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    Ok(())
}

/// K-Means++ seeding: the first centroid is uniform, each further one is drawn
/// with probability proportional to its squared distance from the nearest
/// centroid chosen so far.
pub fn kmeanspp_seed(points: &Points, k: usize, seed: u64) -> Result<Seeding> {
    check_k(points, k)?;
    let n = points.len();
    let mut rng = stage_rng(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_euclidean_unchecked(points.row(i), points.row(first)))
        .collect();
    let mut duplicates = false;
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    last_positive = i;
                    cum += w;
                    if cum > target {
                        pick = Some(i);
                        break;
                    }
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            duplicates = true;
            rng.random_range(0..n)
        };
        chosen.push(pick);
        let c = points.row(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            let nd = squared_euclidean_unchecked(points.row(i), c);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(Seeding {
        centroids: chosen.iter().map(|&i| points.row(i).to_vec()).collect(),
        chosen,
        duplicates,
    })
}

/// `k` distinct points drawn uniformly (plain K-Means initialization).
pub fn random_seed(points: &Points, k: usize, seed: u64) -> Result<Seeding> {
    check_k(points, k)?;
    let mut rng = stage_rng(seed);
    let chosen = index::sample(&mut rng, points.len(), k).into_vec();
    let centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points.row(i).to_vec()).collect();
    let mut bits: Vec<Vec<u64>> = centroids
        .iter()
        .map(|c| c.iter().map(|v| v.to_bits()).collect())
        .collect();
    bits.sort_unstable();
    bits.dedup();
    Ok(Seeding {
        duplicates: bits.len() < k,
        centroids,
        chosen,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<u32>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub cluster_sizes: Vec<usize>,
    pub iterations_run: usize,
    /// True when the run ended on a fixed point (no assignment changed).
    pub converged: bool,
    /// Seed handed to the clustering call.
    pub rng_seed: u64,
    /// Seed of the restart that produced this result.
    pub restart_seed: u64,
    #[serde(default)]
    pub duplicate_centroids: bool,
    /// Inertia after every assignment step, first entry from the initial centroids.
    #[serde(default)]
    pub inertia_history: Vec<f64>,
}

impl ClusteringResult {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a as usize == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural checks for results loaded from disk.
    pub fn validate(&self, n_points: Option<usize>) -> Result<()> {
        if self.k == 0 || self.centroids.len() != self.k || self.cluster_sizes.len() != self.k {
            return Err(Error::format("clustering result", "inconsistent k"));
        }
        if self.centroids.iter().any(|c| c.len() != self.dim) {
            return Err(Error::format("clustering result", "centroid dimension"));
        }
        if let Some(n) = n_points {
            if self.assignments.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: self.assignments.len(),
                });
            }
        }
        let mut sizes = vec![0usize; self.k];
        for &a in &self.assignments {
            *sizes
                .get_mut(a as usize)
                .ok_or_else(|| Error::format("clustering result", "assignment out of range"))? += 1;
        }
        if sizes != self.cluster_sizes {
            return Err(Error::format("clustering result", "cluster sizes disagree with assignments"));
        }
        Ok(())
    }
}

struct Assignment {
    labels: Vec<u32>,
    dists: Vec<f64>,
    inertia: f64,
}

/// Nearest centroid per point using `|x|^2 + |c|^2 - 2 x.c` with cached norms;
/// ties go to the lowest centroid index. The reported distance of the winner
/// is recomputed directly.
fn assign(points: &Points, centroids: &[Vec<f64>]) -> Assignment {
    let c_norms: Vec<f64> = centroids.iter().map(|c| squared_norm(c)).collect();
    let pairs: Vec<(u32, f64)> = (0..points.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let x = points.row(i);
            let xn = points.sq_norms[i];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = (xn + c_norms[j] - 2.0 * dot_unchecked(x, c)).max(0.0);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            (best as u32, squared_euclidean_unchecked(x, &centroids[best]))
        })
        .collect();
    let (labels, dists): (Vec<u32>, Vec<f64>) = pairs.into_iter().unzip();
    let inertia = dists.iter().sum();
    Assignment {
        labels,
        dists,
        inertia,
    }
}

/// Recomputes centroids as member means. An empty cluster is reseeded at the
/// point farthest from its current centroid (each point used at most once).
fn update(points: &Points, current: &Assignment, k: usize) -> Vec<Vec<f64>> {
    let dim = points.dim();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in current.labels.iter().enumerate() {
        counts[a as usize] += 1;
        for (s, v) in sums[a as usize].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    let mut taken: Vec<bool> = vec![false; points.len()];
    for j in 0..k {
        if counts[j] > 0 {
            let inv = counts[j] as f64;
            sums[j].iter_mut().for_each(|s| *s /= inv);
        } else {
            let far = (0..points.len())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| {
                    current.dists[a]
                        .total_cmp(&current.dists[b])
                        .then(b.cmp(&a))
                })
                .unwrap_or(0);
            taken[far] = true;
            sums[j] = points.row(far).to_vec();
        }
    }
    sums
}

/// Cluster means of `labels`; `None` for an empty cluster.
fn means(points: &Points, labels: &[u32], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0f64; points.dim()]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in labels.iter().enumerate() {
        counts[a as usize] += 1;
        for (s, v) in sums[a as usize].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// One in-order sweep of Hartigan transfers. Point `i` leaves cluster `a`
/// for the `b` minimizing `n_b/(n_b+1) |x-m_b|^2` when that is below
/// `n_a/(n_a-1) |x-m_a|^2`, which lowers inertia by the difference. Means are
/// updated after every move. Returns the number of moves.
fn transfer_sweep(points: &Points, labels: &mut [u32], k: usize) -> usize {
    let (mut m, mut counts) = means(points, labels, k);
    let mut moves = 0;
    for i in 0..points.len() {
        let a = labels[i] as usize;
        let na = counts[a];
        if na <= 1 {
            continue;
        }
        let x = points.row(i);
        let remove = na as f64 / (na - 1) as f64 * squared_euclidean_unchecked(x, &m[a]);
        let mut best: Option<(usize, f64)> = None;
        for (b, mb) in m.iter().enumerate() {
            if b == a {
                continue;
            }
            let nb = counts[b] as f64;
            let add = nb / (nb + 1.0) * squared_euclidean_unchecked(x, mb);
            if best.map_or(true, |(_, c)| add < c) {
                best = Some((b, add));
            }
        }
        let Some((b, add)) = best else { continue };
        // relative margin keeps rounding noise from cycling points back and forth
        if add >= remove * (1.0 - 1e-12) {
            continue;
        }
        let nb = counts[b];
        for d in 0..points.dim() {
            m[a][d] = (m[a][d] * na as f64 - x[d]) / (na - 1) as f64;
            m[b][d] = (m[b][d] * nb as f64 + x[d]) / (nb + 1) as f64;
        }
        counts[a] -= 1;
        counts[b] += 1;
        labels[i] = b as u32;
        moves += 1;
    }
    moves
}

/// Lloyd iteration from the given centroids.
///
/// Each step recomputes centroids from the current assignment, then reassigns.
/// A phase ends at a fixed point, when the relative inertia improvement drops
/// to `tol`, or when `max_iter` update steps have run in total. With
/// `transfers`, a phase that ends at a fixed point is followed by a sweep of
/// single-point transfers; if any point moved, Lloyd resumes from the new
/// means. The
/// returned centroids are the ones the final assignment was made against, so
/// every point is assigned to its nearest returned centroid.
pub fn lloyd_iterate(
    points: &Points,
    initial: Vec<Vec<f64>>,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let k = initial.len();
    if k == 0 {
        return Err(Error::invalid("need at least one centroid"));
    }
    if let Some(c) = initial.iter().find(|c| c.len() != points.dim()) {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            found: c.len(),
        });
    }
    let mut centroids = initial;
    let mut current = assign(points, &centroids);
    let mut history = vec![current.inertia];
    let mut iterations = 0;
    let mut converged;
    loop {
        converged = false;
        while iterations < params.max_iter {
            let next_centroids = update(points, &current, k);
            let next = assign(points, &next_centroids);
            iterations += 1;
            let prev_inertia = current.inertia;
            let unchanged = next.labels == current.labels;
            centroids = next_centroids;
            current = next;
            history.push(current.inertia);
            if unchanged {
                converged = true;
                break;
            }
            if prev_inertia - current.inertia <= params.tol * prev_inertia {
                break;
            }
        }
        if !params.transfers || !converged {
            break;
        }
        let mut labels = current.labels.clone();
        if transfer_sweep(points, &mut labels, k) == 0 {
            break;
        }
        // transfers never empty a cluster, so the next update is a plain mean step
        current.labels = labels;
    }
    let mut sizes = vec![0usize; k];
    for &a in &current.labels {
        sizes[a as usize] += 1;
    }
    Ok(ClusteringResult {
        k,
        dim: points.dim(),
        centroids,
        assignments: current.labels,
        inertia: current.inertia,
        cluster_sizes: sizes,
        iterations_run: iterations,
        converged,
        rng_seed: 0,
        restart_seed: 0,
        duplicate_centroids: false,
        inertia_history: history,
    })
}

/// Seeding plus Lloyd refinement for one restart seed.
pub fn cluster_once(
    points: &Points,
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    let seeding = match params.init {
        Initialization::PlusPlus => kmeanspp_seed(points, k, seed)?,
        Initialization::Random => random_seed(points, k, seed)?,
    };
    let mut result = lloyd_iterate(points, seeding.centroids, params)?;
    result.rng_seed = seed;
    result.restart_seed = seed;
    result.duplicate_centroids = seeding.duplicates;
    Ok(result)
}

/// Seed used by restart `r` of a `cluster` call with `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    derive_seed(seed, restart as u64)
}

/// Best-inertia result over `restarts` independent runs; ties go to the lower
/// restart index.
pub fn cluster(
    points: &Points,
    k: usize,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    params.validate()?;
    check_k(points, k)?;
    if restarts == 0 {
        return Err(Error::invalid("restarts must be positive"));
    }
    let runs: Vec<ClusteringResult> = (0..restarts)
        .into_par_iter()
        .map(|r| cluster_once(points, k, restart_seed(seed, r), params))
        .collect::<Result<_>>()?;
    let mut best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.inertia.total_cmp(&b.inertia).then(ia.cmp(ib)))
        .map(|(_, r)| r)
        .expect("restarts > 0");
    best.rng_seed = seed;
    Ok(best)
}

fn content_key(row: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in row {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

/// [`cluster`] on the points sorted by a content hash, with assignments mapped
/// back to input order. The result does not depend on the input order.
pub fn cluster_canonical(
    points: &Points,
    k: usize,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    let keys: Vec<[u8; 32]> = points.rows().map(content_key).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let sorted = points.select(&order);
    let mut result = cluster(&sorted, k, restarts, seed, params)?;
    let mut assignments = vec![0u32; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = result.assignments[pos];
    }
    result.assignments = assignments;
    Ok(result)
}
