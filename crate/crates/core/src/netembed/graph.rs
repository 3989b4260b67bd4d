use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::error::{Error, Result};

/// Directed reply edge `src -> dst` (src replied to dst).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub weight: u32,
    pub post_ids: Vec<String>,
}

/// Directed weighted interaction graph over user indices. Edges are sorted by
/// (src, dst) and post ids within an edge are sorted, so construction does not
/// depend on the order of the post stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InteractionGraph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphReport {
    /// Replies whose target author is not a known user.
    pub dropped_unknown_target: usize,
    /// Posts whose author is not a known user.
    pub unknown_author: usize,
    /// Edges from a user to themselves (kept).
    pub self_loops: usize,
}

pub fn build_graph(posts: &[Post], users: &[String]) -> (InteractionGraph, GraphReport) {
    let index: HashMap<&str, u32> = users
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut report = GraphReport::default();
    let mut acc: BTreeMap<(u32, u32), Vec<String>> = BTreeMap::new();
    for p in posts {
        let Some(target) = p.reply_to_author_id.as_deref() else {
            continue;
        };
        let Some(&src) = index.get(p.author_id.as_str()) else {
            report.unknown_author += 1;
            continue;
        };
        let Some(&dst) = index.get(target) else {
            report.dropped_unknown_target += 1;
            continue;
        };
        acc.entry((src, dst)).or_default().push(p.post_id.clone());
    }
    let edges: Vec<Edge> = acc
        .into_iter()
        .map(|((src, dst), mut post_ids)| {
            post_ids.sort();
            Edge {
                src,
                dst,
                weight: post_ids.len() as u32,
                post_ids,
            }
        })
        .collect();
    report.self_loops = edges.iter().filter(|e| e.src == e.dst).count();
    if report.self_loops > 0 {
        log::info!("{} self-reply edges kept", report.self_loops);
    }
    if report.dropped_unknown_target > 0 {
        log::warn!(
            "dropped {} replies to unknown authors",
            report.dropped_unknown_target
        );
    }
    (
        InteractionGraph {
            num_nodes: users.len(),
            edges,
        },
        report,
    )
}

/// Compressed out-adjacency with sorted targets.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Adjacency {
    pub fn from_graph(g: &InteractionGraph) -> Self {
        let mut offsets = vec![0usize; g.num_nodes + 1];
        for e in &g.edges {
            offsets[e.src as usize + 1] += 1;
        }
        for i in 0..g.num_nodes {
            offsets[i + 1] += offsets[i];
        }
        // Edges are already sorted by (src, dst).
        let targets = g.edges.iter().map(|e| e.dst).collect();
        let weights = g.edges.iter().map(|e| e.weight as f64).collect();
        Adjacency {
            offsets,
            targets,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[v]..self.offsets[v + 1];
        (&self.targets[r.clone()], &self.weights[r])
    }

    pub fn has_edge(&self, a: usize, b: u32) -> bool {
        self.neighbors(a).0.binary_search(&b).is_ok()
    }
}

/// Write `graph.tsv` (src, dst, weight by user id) and `edges.jsonl` (full
/// edge records including post ids).
pub fn write_graph(dir: &Path, g: &InteractionGraph, users: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tsv = String::new();
    let mut jsonl = String::new();
    for e in &g.edges {
        writeln!(
            tsv,
            "{}\t{}\t{}",
            users[e.src as usize], users[e.dst as usize], e.weight
        )
        .unwrap();
        jsonl.push_str(&serde_json::to_string(e)?);
        jsonl.push('\n');
    }
    let p = dir.join("graph.tsv");
    fs::write(&p, tsv).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("edges.jsonl");
    fs::write(&p, jsonl).map_err(|e| Error::io(&p, e))
}

/// Read a graph written by [`write_graph`]. Prefers `edges.jsonl`; falls back
/// to `graph.tsv`, in which case post ids are unavailable and left empty.
pub fn read_graph(dir: &Path, users: &[String]) -> Result<InteractionGraph> {
    let jp = dir.join("edges.jsonl");
    let mut edges = Vec::new();
    if jp.exists() {
        let f = fs::File::open(&jp).map_err(|e| Error::io(&jp, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&jp, e))?;
            if !line.trim().is_empty() {
                edges.push(serde_json::from_str::<Edge>(&line)?);
            }
        }
    } else {
        let tp = dir.join("graph.tsv");
        let index: HashMap<&str, u32> = users
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let text = fs::read_to_string(&tp).map_err(|e| Error::io(&tp, e))?;
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let parse = || -> Option<Edge> {
                Some(Edge {
                    src: *index.get(f.first()?)?,
                    dst: *index.get(f.get(1)?)?,
                    weight: f.get(2)?.parse().ok()?,
                    post_ids: Vec::new(),
                })
            };
            edges.push(parse().ok_or_else(|| Error::archive(&tp, format!("bad line {}", i + 1)))?);
        }
    }
    if edges
        .iter()
        .any(|e| e.src as usize >= users.len() || e.dst as usize >= users.len() || e.weight == 0)
    {
        return Err(Error::archive(
            dir,
            "edge references unknown node or has zero weight",
        ));
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    Ok(InteractionGraph {
        num_nodes: users.len(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(id: &str, from: &str, to: Option<&str>) -> Post {
        Post {
            post_id: id.into(),
            author_id: from.into(),
            reply_to_author_id: to.map(Into::into),
            body: String::new(),
            timestamp: None,
            forum: None,
        }
    }

    fn users(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn repeated_replies_accumulate_weight() {
        let posts = vec![
            reply("1", "a", Some("b")),
            reply("2", "a", Some("b")),
            reply("3", "b", None),
        ];
        let (g, r) = build_graph(&posts, &users(&["a", "b"]));
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].weight, 2);
        assert_eq!(g.edges[0].post_ids, vec!["1", "2"]);
        assert_eq!(r, GraphReport::default());
    }

    #[test]
    fn no_replies_gives_edgeless_graph() {
        let (g, _) = build_graph(&[reply("1", "a", None)], &users(&["a", "b"]));
        assert_eq!(g.num_nodes, 2);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn unknown_targets_are_dropped_and_self_loops_flagged() {
        let posts = vec![reply("1", "a", Some("zz")), reply("2", "a", Some("a"))];
        let (g, r) = build_graph(&posts, &users(&["a"]));
        assert_eq!(r.dropped_unknown_target, 1);
        assert_eq!(r.self_loops, 1);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn graph_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let us = users(&["a", "b", "c"]);
        let posts = vec![
            reply("1", "a", Some("b")),
            reply("2", "c", Some("b")),
            reply("3", "a", Some("b")),
        ];
        let (g, _) = build_graph(&posts, &us);
        write_graph(dir.path(), &g, &us).unwrap();
        assert_eq!(read_graph(dir.path(), &us).unwrap(), g);
        std::fs::remove_file(dir.path().join("edges.jsonl")).unwrap();
        let from_tsv = read_graph(dir.path(), &us).unwrap();
        assert_eq!(
            from_tsv.edges.iter().map(|e| e.weight).collect::<Vec<_>>(),
            vec![2, 1]
        );
    }
}
