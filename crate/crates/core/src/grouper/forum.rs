//! Forum-level view of support groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SupportGroup;
use crate::corpus::{SparseVector, UserProfile};
use crate::util::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumSubgroup {
    pub group_id: String,
    pub users: usize,
    pub median_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumRow {
    pub forum: String,
    pub users: usize,
    pub median_similarity: Option<f64>,
    pub subgroups: Vec<ForumSubgroup>,
}

/// Median pairwise cosine among `members`; `None` below two members or when
/// no pair has two nonzero vectors.
pub fn median_similarity(members: &[usize], vectors: &[SparseVector]) -> Option<f64> {
    let mut cos = Vec::new();
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            cos.extend(vectors[members[i]].cosine(&vectors[members[j]]));
        }
    }
    median(&cos)
}

/// For every forum in the profiles: its users, their median similarity, and
/// each support group's intersection with the forum. Intersections are
/// listed by decreasing median, undefined medians last.
pub fn forum_analysis(
    profiles: &[UserProfile],
    groups: &[SupportGroup],
    vectors: &[SparseVector],
) -> Vec<ForumRow> {
    let mut forums: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (u, p) in profiles.iter().enumerate() {
        for f in &p.forums {
            let m = forums.entry(f.as_str()).or_default();
            if m.last() != Some(&u) {
                m.push(u);
            }
        }
    }
    forums
        .into_iter()
        .map(|(forum, members)| {
            let mut subgroups: Vec<ForumSubgroup> = groups
                .iter()
                .filter_map(|g| {
                    let inter: Vec<usize> = g
                        .members
                        .iter()
                        .copied()
                        .filter(|u| members.binary_search(u).is_ok())
                        .collect();
                    (!inter.is_empty()).then(|| ForumSubgroup {
                        group_id: g.group_id.clone(),
                        users: inter.len(),
                        median_similarity: median_similarity(&inter, vectors),
                    })
                })
                .collect();
            subgroups.sort_by(|a, b| match (a.median_similarity, b.median_similarity) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            });
            ForumRow {
                forum: forum.to_string(),
                users: members.len(),
                median_similarity: median_similarity(&members, vectors),
                subgroups,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `forum_report.csv`: one row per forum/subgroup pair; forums without any
/// grouped user get a single row with empty subgroup columns.
pub fn forum_report_csv(rows: &[ForumRow]) -> String {
    let mut out = String::from(
        "forum,forum_users,forum_median_similarity,group_id,group_users,group_median_similarity\n",
    );
    for r in rows {
        let head = format!(
            "{},{},{}",
            quote(&r.forum),
            r.users,
            opt(r.median_similarity)
        );
        if r.subgroups.is_empty() {
            out.push_str(&format!("{head},,,\n"));
        }
        for s in &r.subgroups {
            out.push_str(&format!(
                "{head},{},{},{}\n",
                s.group_id,
                s.users,
                opt(s.median_similarity)
            ));
        }
    }
    out
}
