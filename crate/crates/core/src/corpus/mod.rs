//! Posts, profiles, per-user documents, TF-IDF and synthetic corpora.

pub mod archive;
mod ingest;
pub mod synth;
mod tfidf;
mod tokenize;
mod types;

pub use archive::{read_corpus, write_corpus};
pub use ingest::{emit_posts, ingest, ingest_jsonl, IngestReport, Ingested, RecordError};
pub use synth::{
    synth_community, synth_gdmr, synth_gstm, CommunityConfig, GroundTruth, SynthConfig, Synthetic,
};
pub use tfidf::{idf, tfidf, SparseVector, TextEmbedding, Tfidf, TfidfVector};
pub use tokenize::{PreprocessConfig, Tokenizer, ENGLISH_STOPWORDS};
pub use types::{AgeBucket, Corpus, Gender, Post, UserProfile};
