//! Minimum-cost assignment (Hungarian algorithm) and topic alignment.

use crate::util::math::total_variation;

/// Minimum-cost perfect assignment for an `n × n` row-major cost matrix.
/// Returns `assign[row] = column`. O(n³).
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based auxiliary row/column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Match each planted topic to an estimated topic minimizing total variation.
/// Both inputs are G × W row-major. Returns `perm[planted] = estimated` and the
/// per-topic distances.
pub fn align_topics(
    planted: &[f64],
    estimated: &[f64],
    groups: usize,
    vocab: usize,
) -> (Vec<usize>, Vec<f64>) {
    let row = |m: &[f64], g: usize| m[g * vocab..(g + 1) * vocab].to_vec();
    let mut cost = vec![0.0; groups * groups];
    for a in 0..groups {
        for b in 0..groups {
            cost[a * groups + b] = total_variation(&row(planted, a), &row(estimated, b));
        }
    }
    let perm = hungarian(&cost, groups);
    let tv = (0..groups).map(|a| cost[a * groups + perm[a]]).collect();
    (perm, tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng::seeded;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn brute(cost: &[f64], n: usize) -> f64 {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, &mut |p| {
            best = best.min((0..n).map(|i| cost[i * n + p[i]]).sum());
        });
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = seeded(3);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
                let a = hungarian(&cost, n);
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let got: f64 = (0..n).map(|i| cost[i * n + a[i]]).sum();
                assert!((got - brute(&cost, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recovers_a_permutation_of_topics() {
        let mut rng = seeded(4);
        let (g, w) = (5, 12);
        let planted: Vec<f64> = (0..g)
            .flat_map(|k| {
                let mut r = vec![0.01; w];
                r[k * 2] = 1.0;
                let s: f64 = r.iter().sum();
                r.into_iter().map(move |v| v / s)
            })
            .collect();
        let mut order: Vec<usize> = (0..g).collect();
        order.shuffle(&mut rng);
        let est: Vec<f64> = order
            .iter()
            .flat_map(|&k| planted[k * w..(k + 1) * w].to_vec())
            .collect();
        let (perm, tv) = align_topics(&planted, &est, g, w);
        for k in 0..g {
            assert_eq!(order[perm[k]], k);
        }
        assert!(tv.iter().all(|&d| d < 1e-12));
    }
}
