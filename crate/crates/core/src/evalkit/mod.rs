//! Evaluation: AIS held-out likelihood, UMass coherence, within-group
//! similarity and the random-grouping baseline.

mod ais;
mod align;
mod coherence;
mod report;
mod similarity;

pub use ais::{
    ais_chain, ais_heldout, combine_log_weights, exact_log_marginal, AisConfig, AisResult,
    Schedule, UserEstimate,
};
pub use align::{align_topics, hungarian};
pub use coherence::{top_indices, umass, Coherence};
pub use report::{heldout_gdmr, EvalReport, HeldOut};
pub use similarity::{
    random_baseline, random_grouping, within_group_similarity, GroupSimilarity, PairCosine,
    SimilarityReport, SIMILARITY_CSV_HEADER,
};

/// Words per topic scored by UMass coherence.
pub const DEFAULT_TOP_M: usize = 10;
