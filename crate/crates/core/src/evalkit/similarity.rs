//! Within-group pairwise cosine similarity and the random-grouping baseline.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SparseVector;
use crate::error::{Error, Result};
use crate::util::rng;
use crate::util::stats::Summary;

/// One scored pair of group members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCosine {
    pub group: String,
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSimilarity {
    pub group: String,
    pub size: usize,
    pub pairs: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub groups: Vec<GroupSimilarity>,
    /// Summary over per-group medians.
    pub summary: Option<Summary>,
    /// Summary over every scored pair.
    pub pair_summary: Option<Summary>,
    pub singletons: usize,
    /// Pairs skipped because a member has a zero vector.
    pub zero_vector_pairs: usize,
    #[serde(skip)]
    pub raw: Vec<PairCosine>,
}

impl SimilarityReport {
    /// `similarities.csv` body.
    pub fn to_csv(&self, source: &str, users: &[String]) -> String {
        let mut out = String::new();
        for p in &self.raw {
            out.push_str(&format!(
                "{source},{},{},{},{:.12}\n",
                p.group, users[p.a], users[p.b], p.cosine
            ));
        }
        out
    }
}

pub const SIMILARITY_CSV_HEADER: &str = "source,group,user_a,user_b,cosine\n";

/// Pairwise cosines within each labelled group of user indices.
pub fn within_group_similarity(
    groups: &[(String, Vec<usize>)],
    vectors: &[SparseVector],
) -> Result<SimilarityReport> {
    if let Some(&u) = groups
        .iter()
        .flat_map(|g| &g.1)
        .find(|&&u| u >= vectors.len())
    {
        return Err(Error::InvalidInput(format!(
            "group member {u} has no vector"
        )));
    }
    let per: Vec<(Option<GroupSimilarity>, Vec<PairCosine>, usize)> = groups
        .par_iter()
        .map(|(label, members)| {
            let mut pairs = Vec::new();
            let mut zero = 0;
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let (a, b) = (members[i], members[j]);
                    match vectors[a].cosine(&vectors[b]) {
                        Some(c) => pairs.push(PairCosine {
                            group: label.clone(),
                            a,
                            b,
                            cosine: c,
                        }),
                        None => zero += 1,
                    }
                }
            }
            let cos: Vec<f64> = pairs.iter().map(|p| p.cosine).collect();
            let stat = (members.len() >= 2)
                .then(|| Summary::of(&cos))
                .flatten()
                .map(|s| GroupSimilarity {
                    group: label.clone(),
                    size: members.len(),
                    pairs: s.n,
                    median: s.median,
                    q1: s.q1,
                    q3: s.q3,
                });
            (stat, pairs, zero)
        })
        .collect();
    let singletons = groups.iter().filter(|g| g.1.len() < 2).count();
    let mut stats = Vec::new();
    let mut raw = Vec::new();
    let mut zero_vector_pairs = 0;
    for (s, p, z) in per {
        stats.extend(s);
        raw.extend(p);
        zero_vector_pairs += z;
    }
    if zero_vector_pairs > 0 {
        log::warn!("{zero_vector_pairs} member pairs skipped: zero text vector");
    }
    let medians: Vec<f64> = stats.iter().map(|s| s.median).collect();
    let all: Vec<f64> = raw.iter().map(|p| p.cosine).collect();
    Ok(SimilarityReport {
        summary: Summary::of(&medians),
        pair_summary: Summary::of(&all),
        groups: stats,
        singletons,
        zero_vector_pairs,
        raw,
    })
}

/// Shuffle the members of `groups` into new groups with the same size
/// multiset (same sizes in the same order).
pub fn random_grouping(groups: &[(String, Vec<usize>)], seed: u64) -> Vec<(String, Vec<usize>)> {
    let mut pool: Vec<usize> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let mut r = rng::stream(seed, &[0xBA5E]);
    pool.shuffle(&mut r);
    let mut it = pool.into_iter();
    groups
        .iter()
        .enumerate()
        .map(|(k, g)| (format!("random-{k}"), it.by_ref().take(g.1.len()).collect()))
        .collect()
}

/// Similarity of a random grouping matched to the evaluated group sizes.
pub fn random_baseline(
    groups: &[(String, Vec<usize>)],
    vectors: &[SparseVector],
    seed: u64,
) -> Result<SimilarityReport> {
    within_group_similarity(&random_grouping(groups, seed), vectors)
}
