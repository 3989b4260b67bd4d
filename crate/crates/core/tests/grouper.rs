use cohort::corpus::{tfidf, SparseVector};
use cohort::grouper::{form_groups, initial_assign, read_groups_jsonl, AssignConfig};
use cohort::netembed::CovariateMatrix;
use cohort::util::rng::seeded;
use rand::Rng;

/// Two themes over disjoint halves of a 40-word vocabulary plus shared noise
/// words. θ seeds are right for only 75% of users; features carry a weak
/// cluster signal.
fn planted(n: usize, seed: u64) -> (Vec<f64>, Vec<SparseVector>, CovariateMatrix, Vec<usize>) {
    let mut r = seeded(seed);
    let mut theta = Vec::new();
    let mut vectors = Vec::new();
    let mut x = Vec::new();
    let mut truth = Vec::new();
    for u in 0..n {
        let c = u % 2;
        truth.push(c);
        let mut e: Vec<(u32, f64)> = Vec::new();
        for _ in 0..20 {
            let w = if r.random::<f64>() < 0.8 {
                (c * 15 + r.random_range(0..15)) as u32
            } else {
                30 + r.random_range(0..10)
            };
            match e.iter_mut().find(|p| p.0 == w) {
                Some(p) => p.1 += 1.0,
                None => e.push((w, 1.0)),
            }
        }
        vectors.push(SparseVector::from_entries(e));
        let right = r.random::<f64>() < 0.75;
        let g = if right { c } else { 1 - c };
        theta.extend(if g == 0 { [0.6, 0.4] } else { [0.4, 0.6] });
        x.push(if c == 0 { 1.0 } else { -1.0 } + r.random_range(-1.2..1.2));
        x.push(r.random_range(-1.0..1.0));
    }
    let x = CovariateMatrix::new(n, vec!["f0".into(), "f1".into()], x).unwrap();
    (theta, vectors, x, truth)
}

#[test]
fn planted_two_clusters_are_recovered() {
    for seed in 0..5 {
        let (theta, vectors, x, truth) = planted(200, seed);
        let a = initial_assign(
            &theta,
            2,
            &vectors,
            &x.standardized(1e-12),
            &AssignConfig::default(),
        )
        .unwrap();
        let hits = a
            .topic
            .iter()
            .zip(&truth)
            .filter(|(t, &c)| **t == Some(c))
            .count();
        let acc = (hits.max(200 - hits)) as f64 / 200.0;
        assert!(acc >= 0.9, "seed {seed}: accuracy {acc}");
        let seed_hits = a
            .seed_topic
            .iter()
            .zip(&truth)
            .filter(|(t, c)| t == c)
            .count();
        assert!(hits > seed_hits);
    }
}

#[test]
fn assignment_ignores_uniform_text_scaling() {
    let (theta, vectors, x, _) = planted(120, 3);
    let xs = x.standardized(1e-12);
    let base = initial_assign(&theta, 2, &vectors, &xs, &AssignConfig::default()).unwrap();
    for c in [0.25, 4.0, 3.7, 1e-3] {
        let scaled: Vec<SparseVector> = vectors.iter().map(|v| v.scaled(c)).collect();
        let a = initial_assign(&theta, 2, &scaled, &xs, &AssignConfig::default()).unwrap();
        assert_eq!(a.topic, base.topic, "scale {c}");
    }
}

#[test]
fn formed_groups_partition_users_within_bounds() {
    let (theta, vectors, x, _) = planted(230, 8);
    let cfg = AssignConfig::default();
    let set = form_groups(&theta, 2, &vectors, &x, &cfg, 11).unwrap();
    assert_eq!(set.violations(&cfg), 0);
    let mut all: Vec<usize> = set.groups.iter().flat_map(|g| g.members.clone()).collect();
    all.sort_unstable();
    assert_eq!(all, (0..230).collect::<Vec<_>>());
    assert!(set
        .groups
        .iter()
        .all(|g| g.group_id == format!("Support_group{}-{}", g.topic_id, g.cluster)));
    let again = form_groups(&theta, 2, &vectors, &x, &cfg, 11).unwrap();
    assert_eq!(set, again);

    let users: Vec<String> = (0..230).map(|u| format!("u{u:04}")).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("groups.jsonl");
    set.write_jsonl(&path, &users).unwrap();
    let back = read_groups_jsonl(&path).unwrap();
    assert_eq!(back, set.records(&users));
}

#[test]
fn tfidf_vectors_from_a_corpus_feed_the_grouper() {
    let s = cohort::corpus::synth_community(&cohort::corpus::CommunityConfig {
        users: 120,
        ..Default::default()
    })
    .unwrap();
    let v = tfidf(&s.corpus);
    let cfg = AssignConfig::default();
    let set = form_groups(&s.truth.theta, s.truth.groups, &v, &s.covariates, &cfg, 1).unwrap();
    assert_eq!(set.violations(&cfg), 0);
}
