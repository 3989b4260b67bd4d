//! Configuration, user-level splitting and run orchestration.

mod config;
mod run;
mod split;
mod stages;

pub use config::{DataConfig, EvalConfig, GroupsConfig, ModelKind, RunConfig, Source, ENV_PREFIX};
pub use run::{
    comparison_csv, resolve, run, table_rows, ComparisonRow, ErrorRecord, RunSummary, StageError,
};
pub use split::{split, split_users, Split};
pub use stages::{
    covariates_for, embed, gdmr_hyper_for, gstm_hyper_for, read_interactions, write_interactions,
    Embedded, Fitted, Manifest, STAGE_VERSIONS,
};
