//! K-Means++ clustering of embedding sets and elbow-based choice of `k`.

mod elbow;
mod exact;
mod kmeans;

pub use elbow::{elbow_select, select_elbow, ElbowTrace};
pub use exact::{exact_kmeans, EXACT_MAX_POINTS};
pub use kmeans::{
    cluster, cluster_canonical, cluster_once, kmeanspp_seed, lloyd_iterate, random_seed,
    restart_seed, ClusteringResult, Initialization, KMeansParams, Points, Seeding,
};
