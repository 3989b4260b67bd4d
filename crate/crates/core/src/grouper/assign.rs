//! Topic-level assignment by combined text and feature similarity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AssignConfig;
use crate::corpus::SparseVector;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;
use crate::util::math::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    /// Topic per user; `None` for users left out (see `unassigned`).
    pub topic: Vec<Option<usize>>,
    /// Topic chosen by argmax θ before reassignment.
    pub seed_topic: Vec<usize>,
    /// Users excluded from assignment with the reason.
    pub unassigned: Vec<(usize, String)>,
    /// Topics with no members after reassignment.
    pub dropped: Vec<usize>,
    /// Users whose topic differs from their seed topic.
    pub moved: usize,
}

impl TopicAssignment {
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.topic.len())
            .filter(|&u| self.topic[u] == Some(g))
            .collect()
    }
}

/// w_text · cos_text + w_feat · cos_feat; an undefined cosine counts as 0.
pub fn combined_score(text: Option<f64>, feat: Option<f64>, cfg: &AssignConfig) -> f64 {
    cfg.w_text * text.unwrap_or(0.0) + cfg.w_feat * feat.unwrap_or(0.0)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (g, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = g;
        }
    }
    best
}

/// Seed topics by argmax θ, build text and feature centroids from the seeds,
/// then move each user once to the topic with the highest combined score.
/// Ties keep the seed topic, then prefer the lower index.
///
/// `x` should already be standardized. Users with an empty text vector are
/// left unassigned.
pub fn initial_assign(
    theta: &[f64],
    groups: usize,
    vectors: &[SparseVector],
    x: &CovariateMatrix,
    cfg: &AssignConfig,
) -> Result<TopicAssignment> {
    cfg.validate()?;
    let users = vectors.len();
    if theta.len() != users * groups {
        return Err(Error::Dimension {
            what: "theta length",
            expected: users * groups,
            got: theta.len(),
        });
    }
    if x.rows != users {
        return Err(Error::Dimension {
            what: "covariate rows vs text vectors",
            expected: users,
            got: x.rows,
        });
    }
    let vocab = vectors
        .iter()
        .filter_map(|v| v.entries.last().map(|e| e.0 as usize + 1))
        .max()
        .unwrap_or(0);
    let d = x.cols;

    let seed_topic: Vec<usize> = (0..users)
        .map(|u| argmax(&theta[u * groups..(u + 1) * groups]))
        .collect();
    let active: Vec<bool> = vectors.iter().map(|v| !v.is_zero()).collect();
    let unassigned: Vec<(usize, String)> = (0..users)
        .filter(|&u| !active[u])
        .map(|u| (u, "empty text vector".to_string()))
        .collect();

    let mut text = vec![0.0; groups * vocab];
    let mut feat = vec![0.0; groups * d];
    let mut count = vec![0usize; groups];
    for u in (0..users).filter(|&u| active[u]) {
        let g = seed_topic[u];
        count[g] += 1;
        vectors[u].add_to_dense(&mut text[g * vocab..(g + 1) * vocab], 1.0);
        feat[g * d..(g + 1) * d]
            .iter_mut()
            .zip(x.row(u))
            .for_each(|(a, v)| *a += v);
    }
    for g in 0..groups {
        if count[g] > 0 {
            let n = count[g] as f64;
            text[g * vocab..(g + 1) * vocab]
                .iter_mut()
                .for_each(|v| *v /= n);
            feat[g * d..(g + 1) * d].iter_mut().for_each(|v| *v /= n);
        }
    }
    let text_norm: Vec<f64> = (0..groups)
        .map(|g| {
            text[g * vocab..(g + 1) * vocab]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    let topic: Vec<Option<usize>> = (0..users)
        .into_par_iter()
        .map(|u| {
            if !active[u] {
                return None;
            }
            let v = &vectors[u];
            let score = |g: usize| {
                let t = (text_norm[g] > 0.0).then(|| {
                    v.dot_dense(&text[g * vocab..(g + 1) * vocab]) / (v.norm * text_norm[g])
                });
                let f = cosine(x.row(u), &feat[g * d..(g + 1) * d]);
                combined_score(t, f, cfg)
            };
            let mut best = seed_topic[u];
            let mut best_score = score(best);
            for g in (0..groups).filter(|&g| count[g] > 0) {
                let s = score(g);
                if s > best_score {
                    best = g;
                    best_score = s;
                }
            }
            Some(best)
        })
        .collect();

    let mut size = vec![0usize; groups];
    topic.iter().flatten().for_each(|&g| size[g] += 1);
    let dropped: Vec<usize> = (0..groups).filter(|&g| size[g] == 0).collect();
    if !dropped.is_empty() {
        log::info!(
            "{} topics have no members and were dropped: {:?}",
            dropped.len(),
            dropped
        );
    }
    let moved = topic
        .iter()
        .zip(&seed_topic)
        .filter(|(t, &s)| t.is_some_and(|t| t != s))
        .count();
    Ok(TopicAssignment {
        topic,
        seed_topic,
        unassigned,
        dropped,
        moved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(e: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_entries(e.to_vec())
    }

    #[test]
    fn weights_combine_linearly() {
        let cfg = AssignConfig::default();
        assert!((combined_score(Some(1.0), Some(0.0), &cfg) - 0.7).abs() < 1e-15);
        assert!((combined_score(Some(0.5), Some(1.0), &cfg) - 0.65).abs() < 1e-15);
        assert_eq!(combined_score(None, None, &cfg), 0.0);
    }

    #[test]
    fn text_only_weights_follow_text() {
        // θ seeds users 0,1 into topic 0 and 2,3 into topic 1; user 1 writes
        // like topic 1 and has topic-0 features.
        let vectors = vec![
            sv(&[(0, 1.0)]),
            sv(&[(1, 1.0)]),
            sv(&[(1, 1.0)]),
            sv(&[(1, 0.9), (2, 0.1)]),
        ];
        let theta = vec![0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8];
        let x = CovariateMatrix::new(
            4,
            vec!["f".into(), "g".into()],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        )
        .unwrap();
        let text_only = AssignConfig {
            w_text: 1.0,
            w_feat: 0.0,
            ..Default::default()
        };
        let a = initial_assign(&theta, 2, &vectors, &x, &text_only).unwrap();
        assert_eq!(a.topic, vec![Some(0), Some(1), Some(1), Some(1)]);
        assert_eq!(a.moved, 1);
        let feat_only = AssignConfig {
            w_text: 0.0,
            w_feat: 1.0,
            ..Default::default()
        };
        let a = initial_assign(&theta, 2, &vectors, &x, &feat_only).unwrap();
        assert_eq!(a.topic, vec![Some(0), Some(0), Some(1), Some(1)]);
    }

    #[test]
    fn empty_vectors_and_topics() {
        let vectors = vec![sv(&[(0, 1.0)]), sv(&[]), sv(&[(0, 2.0)])];
        let theta = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let x = CovariateMatrix::empty(3);
        let a = initial_assign(&theta, 3, &vectors, &x, &AssignConfig::default()).unwrap();
        assert_eq!(a.topic, vec![Some(0), None, Some(0)]);
        assert_eq!(a.unassigned, vec![(1, "empty text vector".to_string())]);
        assert_eq!(a.dropped, vec![1, 2]);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let vectors = vec![sv(&[(0, 1.0)])];
        let x = CovariateMatrix::empty(1);
        assert!(initial_assign(&[1.0], 2, &vectors, &x, &AssignConfig::default()).is_err());
        assert!(initial_assign(
            &[1.0],
            1,
            &vectors,
            &CovariateMatrix::empty(2),
            &AssignConfig::default()
        )
        .is_err());
    }
}
