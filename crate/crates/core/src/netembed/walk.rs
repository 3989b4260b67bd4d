//! Second-order biased random walks.
//!
//! From the current node `v`, having arrived from `t`, the next node `x` is
//! drawn with probability proportional to `w(v, x) * bias(t, x)` where
//! `bias = 1/p` if `x == t`, `1` if `t -> x` is an edge, and `1/q` otherwise.
//! Proposals come from the per-node weighted alias table and are accepted with
//! probability `bias / max_bias`, which samples the biased distribution exactly.
//! A walk that reaches a node with no out-edges is truncated.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::Adjacency;
use crate::util::alias::AliasTable;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    /// Maximum number of nodes in a walk, including the start.
    pub walk_len: usize,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 200,
            walk_len: 30,
            p: 1.0,
            q: 1.0,
            seed: 0,
        }
    }
}

pub struct Walker<'a> {
    adj: &'a Adjacency,
    tables: Vec<Option<AliasTable>>,
    inv_p: f64,
    inv_q: f64,
    max_bias: f64,
    first_order: bool,
}

impl<'a> Walker<'a> {
    pub fn new(adj: &'a Adjacency, p: f64, q: f64) -> Self {
        let tables = (0..adj.num_nodes())
            .map(|v| AliasTable::new(adj.neighbors(v).1))
            .collect();
        let (inv_p, inv_q) = (1.0 / p, 1.0 / q);
        Walker {
            adj,
            tables,
            inv_p,
            inv_q,
            max_bias: inv_p.max(1.0).max(inv_q),
            first_order: p == 1.0 && q == 1.0,
        }
    }

    /// Next node from `cur`, having arrived from `prev`. `None` at a sink.
    pub fn step<R: Rng + ?Sized>(&self, rng: &mut R, prev: Option<u32>, cur: u32) -> Option<u32> {
        let table = self.tables[cur as usize].as_ref()?;
        let targets = self.adj.neighbors(cur as usize).0;
        let Some(t) = prev.filter(|_| !self.first_order) else {
            return Some(targets[table.sample(rng)]);
        };
        loop {
            let x = targets[table.sample(rng)];
            let bias = if x == t {
                self.inv_p
            } else if self.adj.has_edge(t as usize, x) {
                1.0
            } else {
                self.inv_q
            };
            if rng.random::<f64>() * self.max_bias < bias {
                return Some(x);
            }
        }
    }

    pub fn walk<R: Rng + ?Sized>(&self, rng: &mut R, start: u32, len: usize) -> Vec<u32> {
        let mut w = Vec::with_capacity(len);
        w.push(start);
        let mut prev = None;
        while w.len() < len {
            let cur = *w.last().unwrap();
            match self.step(rng, prev, cur) {
                Some(next) => {
                    prev = Some(cur);
                    w.push(next);
                }
                None => break,
            }
        }
        w
    }
}

/// All walks, ordered round by round (`walks[r * n + v]` starts at `v`). Each
/// start node has its own random stream, so output is independent of threads.
pub fn generate_walks(adj: &Adjacency, cfg: &WalkConfig) -> Vec<Vec<u32>> {
    let n = adj.num_nodes();
    let walker = Walker::new(adj, cfg.p, cfg.q);
    let per_node: Vec<Vec<Vec<u32>>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut rng = rng::stream(cfg.seed, &[0x57A1, v as u64]);
            (0..cfg.walks_per_node)
                .map(|_| walker.walk(&mut rng, v as u32, cfg.walk_len))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n * cfg.walks_per_node);
    for r in 0..cfg.walks_per_node {
        for walks in &per_node {
            out.push(walks[r].clone());
        }
    }
    out
}
