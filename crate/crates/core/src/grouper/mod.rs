//! Support groups from a fitted topic model: topic assignment by weighted
//! text/feature similarity, then size-bounded clustering inside each topic.

mod assign;
mod forum;
mod kmeans;
mod sample;

use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SparseVector;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;
use crate::util::{binio, rng};

pub use assign::{combined_score, initial_assign, TopicAssignment};
pub use forum::{forum_analysis, forum_report_csv, median_similarity, ForumRow, ForumSubgroup};
pub use kmeans::{constrained_kmeans, wcss, Clustering};
pub use sample::{allocate, stratified_sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    pub w_text: f64,
    pub w_feat: f64,
    pub min_size: usize,
    pub max_size: usize,
    /// Topics with at most this many members use the exact transportation
    /// solve instead of greedy capacity assignment. 0 disables it.
    pub exact_max_points: usize,
    pub kmeans_iters: usize,
    /// Random projection width for TF-IDF vectors in the clustering features.
    pub text_dims: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            w_text: 0.7,
            w_feat: 0.3,
            min_size: 10,
            max_size: 30,
            exact_max_points: 0,
            kmeans_iters: 50,
            text_dims: 16,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_text >= 0.0
            && self.w_feat >= 0.0
            && (self.w_text + self.w_feat - 1.0).abs() <= 1e-9)
        {
            return Err(Error::Config(format!(
                "w_text and w_feat must be non-negative and sum to 1 (got {} + {})",
                self.w_text, self.w_feat
            )));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "need 1 <= min_size <= max_size (got {} and {})",
                self.min_size, self.max_size
            )));
        }
        if self.kmeans_iters == 0 {
            return Err(Error::Config("kmeans_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGroup {
    /// `Support_group<topic>-<cluster>`.
    pub group_id: String,
    pub topic_id: usize,
    pub cluster: usize,
    pub members: Vec<usize>,
    pub size: usize,
    /// Below `min_size` because the topic could not be split within bounds.
    pub undersized: bool,
    /// Mean standardized covariate vector of the members.
    pub centroid: Vec<f64>,
    pub median_similarity: Option<f64>,
}

pub fn group_id(topic: usize, cluster: usize) -> String {
    format!("Support_group{topic}-{cluster}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unassigned {
    pub user: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGroupSet {
    pub groups: Vec<SupportGroup>,
    pub unassigned: Vec<Unassigned>,
    pub dropped_topics: Vec<usize>,
    pub moved_users: usize,
}

/// One line of `groups.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: String,
    pub topic_id: usize,
    pub members: Vec<String>,
    pub size: usize,
    pub median_similarity: Option<f64>,
    #[serde(default)]
    pub undersized: bool,
}

impl SupportGroupSet {
    /// `(group_id, members)` pairs for similarity scoring.
    pub fn labelled(&self) -> Vec<(String, Vec<usize>)> {
        self.groups
            .iter()
            .map(|g| (g.group_id.clone(), g.members.clone()))
            .collect()
    }

    /// Groups outside `[min_size, max_size]` that are not flagged undersized.
    pub fn violations(&self, cfg: &AssignConfig) -> usize {
        self.groups
            .iter()
            .filter(|g| g.size > cfg.max_size || (g.size < cfg.min_size && !g.undersized))
            .count()
    }

    pub fn records(&self, users: &[String]) -> Vec<GroupRecord> {
        self.groups
            .iter()
            .map(|g| GroupRecord {
                group_id: g.group_id.clone(),
                topic_id: g.topic_id,
                members: g.members.iter().map(|&u| users[u].clone()).collect(),
                size: g.size,
                median_similarity: g.median_similarity,
                undersized: g.undersized,
            })
            .collect()
    }

    pub fn to_jsonl(&self, users: &[String]) -> Result<String> {
        let mut out = String::new();
        for r in self.records(users) {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path, users: &[String]) -> Result<()> {
        binio::write_text(path, &self.to_jsonl(users)?)
    }
}

pub fn read_groups_jsonl(path: &Path) -> Result<Vec<GroupRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::archive(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Dense `W × dims` Gaussian projection, one stream per word.
fn projection(vocab: usize, dims: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let scale = 1.0 / (dims.max(1) as f64).sqrt();
    (0..vocab)
        .into_par_iter()
        .flat_map_iter(|w| {
            let mut r = rng::stream(seed, &[0x7F0, w as u64]);
            (0..dims)
                .map(move |_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    scale * z
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}

fn standardize_columns(m: &mut [f64], n: usize, p: usize) {
    for j in 0..p {
        let mean = (0..n).map(|i| m[i * p + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (m[i * p + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            m[i * p + j] = if sd > 1e-12 {
                (m[i * p + j] - mean) / sd
            } else {
                0.0
            };
        }
    }
}

/// Clustering features for `members`: standardized covariates next to a
/// random projection of TF-IDF, each column standardized within the topic and
/// the two blocks weighted by √w_feat and √w_text.
pub fn cluster_features(
    members: &[usize],
    vectors: &[SparseVector],
    x_std: &CovariateMatrix,
    proj: &[f64],
    dims: usize,
    cfg: &AssignConfig,
) -> (Vec<f64>, usize) {
    let d = x_std.cols;
    let p = d + dims;
    let n = members.len();
    let mut m = vec![0.0; n * p];
    for (i, &u) in members.iter().enumerate() {
        m[i * p..i * p + d].copy_from_slice(x_std.row(u));
        let v = &vectors[u];
        let inv = if v.norm > 0.0 { 1.0 / v.norm } else { 0.0 };
        for &(w, val) in &v.entries {
            let row = &proj[w as usize * dims..(w as usize + 1) * dims];
            for k in 0..dims {
                m[i * p + d + k] += inv * val * row[k];
            }
        }
    }
    if n > 0 {
        standardize_columns(&mut m, n, p);
    }
    let (wf, wt) = (cfg.w_feat.sqrt(), cfg.w_text.sqrt());
    for i in 0..n {
        m[i * p..i * p + d].iter_mut().for_each(|v| *v *= wf);
        m[i * p + d..(i + 1) * p].iter_mut().for_each(|v| *v *= wt);
    }
    (m, p)
}

/// Assign users to topics, then split each topic into bounded clusters.
/// `x` is standardized here; topics are clustered in parallel, each with its
/// own random stream.
pub fn form_groups(
    theta: &[f64],
    topics: usize,
    vectors: &[SparseVector],
    x: &CovariateMatrix,
    cfg: &AssignConfig,
    seed: u64,
) -> Result<SupportGroupSet> {
    cfg.validate()?;
    let x_std = x.standardized(1e-12);
    let assignment = initial_assign(theta, topics, vectors, &x_std, cfg)?;
    let vocab = vectors
        .iter()
        .filter_map(|v| v.entries.last().map(|e| e.0 as usize + 1))
        .max()
        .unwrap_or(0);
    let proj = projection(vocab, cfg.text_dims, seed);

    let per_topic: Vec<Vec<SupportGroup>> = (0..topics)
        .into_par_iter()
        .map(|t| {
            let members = assignment.members(t);
            if members.is_empty() {
                return Vec::new();
            }
            let (feats, p) = cluster_features(&members, vectors, &x_std, &proj, cfg.text_dims, cfg);
            let c = constrained_kmeans(
                &feats,
                members.len(),
                p,
                cfg,
                rng::derive_seed(seed, &[0x6B3, t as u64]),
            );
            if c.undersized.iter().any(|&u| u) {
                log::warn!(
                    "topic {t}: {} members, kept as undersized group(s)",
                    members.len()
                );
            }
            (0..c.k)
                .map(|k| {
                    let mem: Vec<usize> = c.members(k).into_iter().map(|i| members[i]).collect();
                    let d = x_std.cols;
                    let mut centroid = vec![0.0; d];
                    for &u in &mem {
                        centroid
                            .iter_mut()
                            .zip(x_std.row(u))
                            .for_each(|(a, v)| *a += v);
                    }
                    centroid.iter_mut().for_each(|v| *v /= mem.len() as f64);
                    SupportGroup {
                        group_id: group_id(t, k),
                        topic_id: t,
                        cluster: k,
                        size: mem.len(),
                        median_similarity: median_similarity(&mem, vectors),
                        members: mem,
                        undersized: c.undersized[k],
                        centroid,
                    }
                })
                .collect()
        })
        .collect();

    Ok(SupportGroupSet {
        groups: per_topic.into_iter().flatten().collect(),
        unassigned: assignment
            .unassigned
            .into_iter()
            .map(|(user, reason)| Unassigned { user, reason })
            .collect(),
        dropped_topics: assignment.dropped,
        moved_users: assignment.moved,
    })
}
