//! Representative sampling, cluster labeling, and the prototype dictionary.

mod dictionary;
mod oracle;
mod sampling;

pub use crate::labels::{TissueClass, TissueLabelMap};
pub use dictionary::{
    build_dictionary, load_dictionary, save_dictionary, ClusterVerdict, Decision,
    PrototypeDictionary, PrototypeEntry, Rater, DICTIONARY_VERSION,
};
pub use oracle::{mean_proportions, simulated_label, DEFAULT_PURITY_THRESHOLD};
pub use sampling::{
    central_sample, equidistant_sample, sample_representatives, SamplingStrategy,
    DEFAULT_REPRESENTATIVES,
};
