//! UMass topic coherence over user-level documents.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub per_group: Vec<f64>,
    pub mean: f64,
    /// Top words per group, best first.
    pub top_words: Vec<Vec<u32>>,
    /// Top words that never occur in the reference documents.
    pub absent_words: Vec<u32>,
}

/// Indices of the `m` largest entries of `row`, ties to the lower index.
pub fn top_indices(row: &[f64], m: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// C(g) = Σ_{m≥2} Σ_{l<m} ln[(D(w_m, w_l) + 1) / D(w_l)] with words ranked
/// by `beta[g]` descending. `beta` is G × W and `docs` are token lists over the
/// same vocabulary. A word with D(w_l) = 0 has its denominator floored at 1 and
/// is reported in `absent_words`.
pub fn umass(
    beta: &[f64],
    groups: usize,
    vocab: usize,
    docs: &[Vec<u32>],
    top_m: usize,
) -> Result<Coherence> {
    if top_m < 2 {
        return Err(Error::Config("coherence needs top_m ≥ 2".into()));
    }
    if beta.len() != groups * vocab {
        return Err(Error::Dimension {
            what: "topic-word matrix",
            expected: groups * vocab,
            got: beta.len(),
        });
    }
    let top_words: Vec<Vec<u32>> = (0..groups)
        .map(|g| top_indices(&beta[g * vocab..(g + 1) * vocab], top_m))
        .collect();
    let wanted: HashSet<u32> = top_words.iter().flatten().copied().collect();
    // Per-document sets restricted to the words we score.
    let doc_sets: Vec<HashSet<u32>> = docs
        .par_iter()
        .map(|d| d.iter().copied().filter(|w| wanted.contains(w)).collect())
        .collect();
    let df = |w: u32| doc_sets.iter().filter(|s| s.contains(&w)).count();
    let co = |a: u32, b: u32| {
        doc_sets
            .iter()
            .filter(|s| s.contains(&a) && s.contains(&b))
            .count()
    };

    let mut absent: Vec<u32> = wanted.iter().copied().filter(|&w| df(w) == 0).collect();
    absent.sort_unstable();
    let per_group: Vec<f64> = top_words
        .par_iter()
        .map(|top| {
            let mut c = 0.0;
            for m in 1..top.len() {
                for l in 0..m {
                    let d_l = df(top[l]).max(1) as f64;
                    c += ((co(top[m], top[l]) as f64 + 1.0) / d_l).ln();
                }
            }
            c
        })
        .collect();
    let mean = per_group.iter().sum::<f64>() / groups.max(1) as f64;
    Ok(Coherence {
        per_group,
        mean,
        top_words,
        absent_words: absent,
    })
}
