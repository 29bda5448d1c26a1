use super::kmeans::Points;
use crate::error::{Error, Result};

pub const EXACT_MAX_POINTS: usize = 16;

/// Globally optimal k-means inertia by enumerating every partition of the
/// points into at most `k` blocks. Returns the inertia and one optimal
/// labeling. Exponential; limited to `EXACT_MAX_POINTS` points.
pub fn exact_kmeans(points: &Points, k: usize) -> Result<(f64, Vec<u32>)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("point set"));
    }
    if n > EXACT_MAX_POINTS {
        return Err(Error::invalid(format!(
            "exact k-means enumerates partitions; n = {n} exceeds {EXACT_MAX_POINTS}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let dim = points.dim();
    let sq_total: f64 = points.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum();

    // restricted growth strings: labels[0] = 0, labels[i] <= max(labels[..i]) + 1
    let mut labels = vec![0u32; n];
    let mut best = (f64::INFINITY, labels.clone());
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    loop {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        // sum |x|^2 - sum_b |S_b|^2 / n_b
        let mut explained = 0.0;
        for b in 0..k {
            if counts[b] > 0 {
                let s2: f64 = sums[b * dim..(b + 1) * dim].iter().map(|v| v * v).sum();
                explained += s2 / counts[b] as f64;
            }
        }
        let inertia = (sq_total - explained).max(0.0);
        if inertia < best.0 {
            best = (inertia, labels.clone());
        }
        if !next_partition(&mut labels, k as u32) {
            break;
        }
    }
    Ok(best)
}

fn next_partition(labels: &mut [u32], k: u32) -> bool {
    let n = labels.len();
    for i in (1..n).rev() {
        let max_prefix = labels[..i].iter().copied().max().unwrap_or(0);
        if labels[i] <= max_prefix && labels[i] + 1 < k {
            labels[i] += 1;
            labels[i + 1..].iter_mut().for_each(|l| *l = 0);
            return true;
        }
    }
    false
}
