//! Vector primitives shared by every stage: similarity, distance, normalization,
//! the contrastive objective, and the dense embedding grid.
//!
//! Reductions accumulate in `f64` over eight interleaved lanes that are folded
//! in a fixed order, so a given input always produces the same bits regardless
//! of how callers schedule work across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar types that can be read as embedding coordinates.
pub trait Coord: Copy + Send + Sync + 'static {
    fn to_f64(self) -> f64;
}

impl Coord for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Coord for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

const LANES: usize = 8;

#[inline(always)]
fn fold_lanes(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Dot product without a dimension check. Callers guarantee `a.len() == b.len()`.
#[inline]
pub fn dot_unchecked<A: Coord, B: Coord>(a: &[A], b: &[B]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l].to_f64() * y[l].to_f64();
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += x.to_f64() * y.to_f64();
    }
    fold_lanes(acc)
}

/// Squared norm without allocation.
#[inline]
pub fn squared_norm<A: Coord>(a: &[A]) -> f64 {
    dot_unchecked(a, a)
}

/// Squared Euclidean distance without a dimension check.
#[inline]
pub fn squared_euclidean_unchecked<A: Coord, B: Coord>(a: &[A], b: &[B]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = x[l].to_f64() - y[l].to_f64();
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = x.to_f64() - y.to_f64();
        acc[l] += d * d;
    }
    fold_lanes(acc)
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

pub fn dot<A: Coord, B: Coord>(a: &[A], b: &[B]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

pub fn norm<A: Coord>(a: &[A]) -> f64 {
    squared_norm(a).sqrt()
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// A zero-norm argument is an error rather than a silent zero similarity.
pub fn cosine_similarity<A: Coord, B: Coord>(a: &[A], b: &[B]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let c = dot_unchecked(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(Error::NonFinite("cosine similarity"));
    }
    Ok(c.clamp(-1.0, 1.0))
}

pub fn squared_euclidean<A: Coord, B: Coord>(a: &[A], b: &[B]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(squared_euclidean_unchecked(a, b))
}

/// Returns `a / |a|`.
pub fn l2_normalize<A: Coord>(a: &[A]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite("vector norm"));
    }
    Ok(a.iter().map(|x| x.to_f64() / n).collect())
}

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn normalized(&self) -> Result<Self> {
        Ok(Self(l2_normalize(&self.0)?))
    }
}

impl std::ops::Deref for EmbeddingVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.5 }
    }
}

impl ContrastiveConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }
}

/// NT-Xent / InfoNCE loss of one anchor against one positive and a set of negatives,
/// using cosine similarity scaled by the temperature.
///
/// Evaluated as `logsumexp(logits) - positive_logit` with the maximum logit
/// subtracted first. An empty negative set yields exactly zero.
pub fn nt_xent_loss<A: Coord>(
    anchor: &[A],
    positive: &[A],
    negatives: &[&[A]],
    cfg: &ContrastiveConfig,
) -> Result<f64> {
    ContrastiveConfig::new(cfg.temperature)?;
    let pos_logit = cosine_similarity(anchor, positive)? / cfg.temperature;
    if negatives.is_empty() {
        return Ok(0.0);
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(pos_logit);
    for neg in negatives {
        logits.push(cosine_similarity(anchor, neg)? / cfg.temperature);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = max + sum.ln() - pos_logit;
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss"));
    }
    Ok(loss.max(0.0))
}

/// Dense `height x width` map of `dim`-dimensional cell embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::invalid("grid size overflows"))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding grid"));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }
}
