//! K-means with per-cluster size bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AssignConfig;
use crate::evalkit::hungarian;
use crate::util::rng;

/// Result of clustering the members of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index per point.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Per-cluster flag: size below `min_size` because the bounds could not
    /// be met.
    pub undersized: Vec<bool>,
    /// Within-cluster sum of squares after every accepted iteration.
    pub wcss: Vec<f64>,
    /// True when the exact transportation solve was used.
    pub exact: bool,
    /// True when `k · min_size > n`, so lower bounds were abandoned.
    pub infeasible: bool,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.labels.iter().for_each(|&l| s[l] += 1);
        s
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == c)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroids(points: &[f64], p: usize, labels: &[usize], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * p];
    let mut n = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        n[l] += 1;
        for j in 0..p {
            c[l * p + j] += points[i * p + j];
        }
    }
    for l in 0..k {
        if n[l] > 0 {
            c[l * p..(l + 1) * p]
                .iter_mut()
                .for_each(|v| *v /= n[l] as f64);
        }
    }
    c
}

/// Within-cluster sum of squares with centroids at the cluster means.
pub fn wcss(points: &[f64], p: usize, labels: &[usize], k: usize) -> f64 {
    let c = centroids(points, p, labels, k);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(&points[i * p..(i + 1) * p], &c[l * p..(l + 1) * p]))
        .sum()
}

fn plus_plus<R: Rng>(points: &[f64], n: usize, p: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let mut c = Vec::with_capacity(k * p);
    let first = rng.random_range(0..n);
    c.extend_from_slice(&points[first * p..(first + 1) * p]);
    let mut d: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * p..(i + 1) * p], &c[..p]))
        .collect();
    for _ in 1..k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &v) in d.iter().enumerate() {
                if r < v {
                    pick = i;
                    break;
                }
                r -= v;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let start = c.len();
        c.extend_from_slice(&points[pick * p..(pick + 1) * p]);
        for (i, di) in d.iter_mut().enumerate() {
            *di = di.min(sq_dist(&points[i * p..(i + 1) * p], &c[start..start + p]));
        }
    }
    c
}

fn distances(points: &[f64], n: usize, p: usize, c: &[f64], k: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * k];
    for i in 0..n {
        for l in 0..k {
            d[i * k + l] = sq_dist(&points[i * p..(i + 1) * p], &c[l * p..(l + 1) * p]);
        }
    }
    d
}

/// Greedy capacity assignment: pairs are taken in increasing distance and a
/// point goes to the first cluster it meets that still has room.
fn greedy(d: &[f64], n: usize, k: usize, cap: usize) -> Vec<usize> {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..k).map(move |l| (i, l))).collect();
    pairs.sort_by(|a, b| d[a.0 * k + a.1].total_cmp(&d[b.0 * k + b.1]).then(a.cmp(b)));
    let mut labels = vec![usize::MAX; n];
    let mut size = vec![0; k];
    let mut left = n;
    for (i, l) in pairs {
        if labels[i] == usize::MAX && size[l] < cap {
            labels[i] = l;
            size[l] += 1;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    labels
}

/// Lift undersized clusters to `min` by taking the nearest points from
/// clusters that can spare them.
fn repair(d: &[f64], labels: &mut [usize], k: usize, min: usize) {
    let mut size = vec![0usize; k];
    labels.iter().for_each(|&l| size[l] += 1);
    for c in 0..k {
        while size[c] < min {
            let best = (0..labels.len())
                .filter(|&i| labels[i] != c && size[labels[i]] > min)
                .min_by(|&a, &b| d[a * k + c].total_cmp(&d[b * k + c]).then(a.cmp(&b)));
            let Some(i) = best else { break };
            size[labels[i]] -= 1;
            labels[i] = c;
            size[c] += 1;
        }
    }
}

/// Exact min-cost assignment with every cluster holding between `min` and
/// `max` points, solved as a square assignment over cluster slots. The first
/// `min` slots of each cluster are mandatory: padding rows pay `big` to use
/// them, so real points fill them first.
fn transport(d: &[f64], n: usize, k: usize, min: usize, max: usize) -> Vec<usize> {
    let m = k * max;
    let big = 1.0 + 2.0 * n as f64 * d.iter().cloned().fold(0.0, f64::max);
    let mut cost = vec![0.0; m * m];
    for r in 0..m {
        for s in 0..m {
            let (l, slot) = (s / max, s % max);
            cost[r * m + s] = if r < n {
                d[r * k + l]
            } else if slot < min {
                big
            } else {
                0.0
            };
        }
    }
    let a = hungarian(&cost, m);
    (0..n).map(|i| a[i] / max).collect()
}

/// Split `n` points of dimension `p` (row-major) into `ceil(n / max_size)`
/// clusters whose sizes lie in `[min_size, max_size]`.
///
/// When `n ≤ max_size` the topic is a single cluster (flagged if below
/// `min_size`). When `k · min_size > n` no split can satisfy the lower bound;
/// clusters then respect only `max_size` and small ones are flagged.
pub fn constrained_kmeans(
    points: &[f64],
    n: usize,
    p: usize,
    cfg: &AssignConfig,
    seed: u64,
) -> Clustering {
    assert_eq!(points.len(), n * p, "points must be n × p");
    let (min, max) = (cfg.min_size, cfg.max_size);
    if n <= max {
        return Clustering {
            labels: vec![0; n],
            k: usize::from(n > 0),
            undersized: if n > 0 { vec![n < min] } else { Vec::new() },
            wcss: vec![wcss(points, p, &vec![0; n], usize::from(n > 0))],
            exact: false,
            infeasible: n > 0 && n < min,
        };
    }
    let k = n.div_ceil(max);
    let infeasible = k * min > n;
    if infeasible {
        log::warn!("{n} points cannot form {k} clusters of at least {min}; lower bound dropped");
    }
    let exact = !infeasible && n <= cfg.exact_max_points;
    let mut r = rng::stream(seed, &[0x6B3]);
    let mut c = plus_plus(points, n, p, k, &mut r);

    let step = |c: &[f64]| {
        let d = distances(points, n, p, c, k);
        if exact {
            transport(&d, n, k, min, max)
        } else {
            let mut l = greedy(&d, n, k, max);
            if !infeasible {
                repair(&d, &mut l, k, min);
            }
            l
        }
    };

    let mut labels = step(&c);
    let mut trace = vec![wcss(points, p, &labels, k)];
    for _ in 1..cfg.kmeans_iters {
        c = centroids(points, p, &labels, k);
        let next = step(&c);
        if next == labels {
            break;
        }
        let obj = wcss(points, p, &next, k);
        if obj > *trace.last().unwrap() {
            break;
        }
        labels = next;
        trace.push(obj);
    }
    let mut size = vec![0; k];
    labels.iter().for_each(|&l| size[l] += 1);
    Clustering {
        labels,
        k,
        undersized: size.iter().map(|&s| s < min).collect(),
        wcss: trace,
        exact,
        infeasible,
    }
}
