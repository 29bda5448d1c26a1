//! Dictionary queries over embedding grids and the resulting masks.

mod mask;
mod outliers;
mod query;

pub use crate::labels::ClassId;
pub use mask::{
    decode_pgm, encode_pgm, mask_sidecar_path, read_mask, upsample_mask, write_mask, ClassMask,
    LabelGrid,
};
pub use outliers::{count_errors, outlier_case, OutlierCase, OutlierCaseConfig};
pub use query::{
    cluster_then_query, cq_cluster_count, direct_query, distinct_tissue_count, query, CqConfig,
    QueryMode, DEFAULT_CQ_RESTARTS, DEFAULT_GAMMA,
};

/// Grid-to-pixel factor of the built-in featurizer.
pub const DEFAULT_UPSAMPLE: usize = 32;
