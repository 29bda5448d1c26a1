//! Prototype-based dense segmentation from unlabeled patch embeddings.
//!
//! The crate covers the whole offline path: tile and embed images, cluster
//! patch embeddings with K-Means++, label a few representatives per cluster
//! (by a person or a simulated rater), collect labeled centroids into a
//! prototype dictionary, and query that dictionary per grid cell to obtain
//! coarse masks that are then scored against ground truth.

pub mod clustering;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod ingest;
pub mod labeling;
pub mod labels;
pub mod prototype;
pub mod rng;
pub mod segmentation;

pub use error::{Error, ErrorKind, Result};
