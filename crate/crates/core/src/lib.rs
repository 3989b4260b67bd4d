//! Covariate-aware topic models and the support-group pipeline built on them.
//!
//! * [`corpus`]: ingestion, tokenization, TF-IDF, synthetic generators.
//! * [`netembed`]: reply graph, node2vec, covariate matrix.
//! * [`gdmr`]: Dirichlet-multinomial regression with group pseudocounts.
//! * [`gstm`]: logistic-normal prevalence with sparse word deviations.
//! * [`evalkit`]: held-out likelihood, coherence, similarity.
//! * [`grouper`]: size-bounded support groups.
//! * [`pipeline`]: configuration, splitting, run orchestration.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod gdmr;
pub mod grouper;
pub mod gstm;
pub mod netembed;
pub mod optim;
pub mod pipeline;
pub mod util;

pub use error::{Error, Result};
