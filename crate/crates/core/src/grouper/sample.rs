//! Stratified sampling of group members for review.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::corpus::{AgeBucket, Gender, UserProfile};
use crate::util::rng;

/// Largest-remainder allocation of `k` slots over strata of the given sizes.
/// Equal remainders go to the larger stratum, then the earlier one.
pub fn allocate(sizes: &[usize], k: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let k = k.min(n);
    let mut quota: Vec<usize> = sizes.iter().map(|&s| s * k / n).collect();
    let left = k - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainder of s·k/n is (s·k mod n)/n; compare the integer numerators.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (sizes[a] * k % n, sizes[b] * k % n);
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    for &s in order.iter().take(left) {
        quota[s] += 1;
    }
    quota
}

/// Sample `k` members proportionally across gender × age-bucket strata.
/// Groups of at most `k` members are returned whole. The result is sorted.
pub fn stratified_sample(
    members: &[usize],
    profiles: &[UserProfile],
    k: usize,
    seed: u64,
) -> Vec<usize> {
    if members.len() <= k {
        let mut all = members.to_vec();
        all.sort_unstable();
        return all;
    }
    let mut strata: BTreeMap<(Gender, AgeBucket), Vec<usize>> = BTreeMap::new();
    for &u in members {
        strata
            .entry((profiles[u].gender, profiles[u].age_bucket))
            .or_default()
            .push(u);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let quota = allocate(&sizes, k);
    let mut r = rng::stream(seed, &[0x5A3]);
    let mut out = Vec::with_capacity(k);
    for (mut users, q) in strata.into_values().zip(quota) {
        users.sort_unstable();
        users.shuffle(&mut r);
        out.extend_from_slice(&users[..q]);
    }
    out.sort_unstable();
    out
}
