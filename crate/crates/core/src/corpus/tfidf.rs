//! TF-IDF user vectors.
//!
//! weight(u, w) = tf(u, w) * (ln((1 + U) / (1 + df(w))) + 1), then L2-normalized.
//! The `+ 1` keeps words present in every document at weight `tf` instead of 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::types::Corpus;

/// Sparse non-negative vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
    pub norm: f64,
}

pub type TfidfVector = SparseVector;

impl SparseVector {
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        SparseVector { entries, norm }
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    pub fn recompute_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut s = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    /// Cosine similarity; `None` if either vector is zero.
    pub fn cosine(&self, other: &SparseVector) -> Option<f64> {
        if self.is_zero() || other.is_zero() {
            return None;
        }
        Some(self.dot(other) / (self.norm * other.norm))
    }

    pub fn scaled(&self, c: f64) -> SparseVector {
        SparseVector {
            entries: self.entries.iter().map(|&(i, v)| (i, v * c)).collect(),
            norm: self.norm * c.abs(),
        }
    }

    /// Dot product with a dense vector.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| v * dense[i as usize])
            .sum()
    }

    pub fn add_to_dense(&self, dense: &mut [f64], scale: f64) {
        for &(i, v) in &self.entries {
            dense[i as usize] += scale * v;
        }
    }
}

/// Source of per-user text vectors. TF-IDF is the built-in provider; other
/// representations (e.g. sentence embeddings computed elsewhere) can be plugged
/// into similarity and grouping through this trait.
pub trait TextEmbedding: Send + Sync {
    fn embed(&self, corpus: &Corpus) -> Vec<SparseVector>;
}

/// Smoothed-idf TF-IDF fitted on the corpus being embedded.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tfidf;

impl TextEmbedding for Tfidf {
    fn embed(&self, corpus: &Corpus) -> Vec<SparseVector> {
        tfidf(corpus)
    }
}

/// Smoothed inverse document frequencies.
pub fn idf(corpus: &Corpus) -> Vec<f64> {
    let n = corpus.num_users() as f64;
    corpus
        .doc_freq()
        .into_iter()
        .map(|df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
        .collect()
}

/// L2-normalized TF-IDF vector per user. Users without tokens get the zero
/// vector (flagged in the log).
pub fn tfidf(corpus: &Corpus) -> Vec<TfidfVector> {
    let idf = idf(corpus);
    let out: Vec<TfidfVector> = (0..corpus.num_users())
        .into_par_iter()
        .map(|u| {
            let mut entries: Vec<(u32, f64)> = corpus
                .counts(u)
                .into_iter()
                .map(|(w, c)| (w, c as f64 * idf[w as usize]))
                .collect();
            let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm == 0.0 {
                return SparseVector::default();
            }
            for e in entries.iter_mut() {
                e.1 /= norm;
            }
            SparseVector::from_entries(entries)
        })
        .collect();
    let empty = out.iter().filter(|v| v.is_zero()).count();
    if empty > 0 {
        log::warn!("{empty} users have zero TF-IDF vectors");
    }
    out
}
