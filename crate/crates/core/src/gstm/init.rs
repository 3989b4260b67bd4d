use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mstep::recenter;
use super::state::GstmState;
use super::{ContentPrior, GstmHyper, InitScheme};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gdmr::{GdmrHyper, PriorMode};
use crate::util::rng;
use crate::util::sampling::dirichlet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub requested: InitScheme,
    pub used: InitScheme,
    /// Why the requested scheme was abandoned, if it was.
    pub fallback_reason: Option<String>,
}

const BETA_FLOOR: f64 = 1e-10;

/// Starting state: m from smoothed word frequencies, β from the chosen scheme,
/// κ = log β − m recentred per word, λ = 0, γ = 0, Σ = I, τ = 1.
pub fn init(corpus: &Corpus, dim: usize, hyper: &GstmHyper) -> Result<(GstmState, InitOutcome)> {
    hyper.validate()?;
    let (g, w) = (hyper.groups, corpus.vocab_size());
    if corpus.num_users() == 0 || w == 0 || corpus.total_tokens() == 0 {
        return Err(Error::InvalidInput(
            "gSTM init needs a nonempty corpus".into(),
        ));
    }
    let mut freq = vec![1.0; w];
    for t in corpus.tokens.iter().flatten() {
        freq[*t as usize] += 1.0;
    }
    let total: f64 = freq.iter().sum();
    let m: Vec<f64> = freq.iter().map(|c| (c / total).ln()).collect();

    let mut outcome = InitOutcome {
        requested: hyper.init,
        used: hyper.init,
        fallback_reason: None,
    };
    let beta = match hyper.init {
        InitScheme::Random => random_topics(g, w, hyper.seed),
        InitScheme::Lda => lda_topics(corpus, hyper),
        InitScheme::Spectral => {
            let attempt = if w > hyper.spectral_max_vocab {
                Err(Error::Numerical(format!(
                    "vocabulary of {w} exceeds the spectral limit {}",
                    hyper.spectral_max_vocab
                )))
            } else {
                spectral_topics(corpus, g)
            };
            match attempt {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("spectral init failed ({e}); falling back to LDA init");
                    outcome.used = InitScheme::Lda;
                    outcome.fallback_reason = Some(e.to_string());
                    lda_topics(corpus, hyper)
                }
            }
        }
    };
    let mut kappa = vec![0.0; g * w];
    for gi in 0..g {
        let row = &beta[gi * w..(gi + 1) * w];
        let s: f64 = row.iter().map(|b| b + BETA_FLOOR).sum();
        for j in 0..w {
            kappa[gi * w + j] = ((row[j] + BETA_FLOOR) / s).ln() - m[j];
        }
    }
    let mut state = GstmState::new(g, dim, corpus.num_users(), m, kappa);
    recenter(&mut state, ContentPrior::Laplace);
    state.refresh_beta();
    Ok((state, outcome))
}

fn random_topics(g: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[0x57A, 0]);
    (0..g)
        .flat_map(|_| dirichlet(&mut r, &vec![1.0; w]))
        .collect()
}

fn lda_topics(corpus: &Corpus, hyper: &GstmHyper) -> Vec<f64> {
    let gh = GdmrHyper {
        groups: hyper.groups,
        iters_warm: hyper.lda_sweeps.max(1),
        iters_total: hyper.lda_sweeps.max(1) + 1,
        mode: PriorMode::Lda,
        seed: rng::derive_seed(hyper.seed, &[0x57A, 1]),
        ..Default::default()
    };
    let (state, _) = crate::gdmr::warm_start(corpus, 0, &gh).expect("validated LDA settings");
    state.phi_hat(gh.beta)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Anchor-word topic recovery from the word co-occurrence matrix. Anchors are
/// picked greedily by residual norm among row-normalized co-occurrence
/// profiles; every word is then written as a convex combination of the anchor
/// profiles and Bayes' rule turns the weights into G × W topics. Fails when
/// the profiles span fewer than G directions.
pub fn spectral_topics(corpus: &Corpus, groups: usize) -> Result<Vec<f64>> {
    let w = corpus.vocab_size();
    let u = corpus.num_users();
    let mut q = vec![0.0f64; w * w];
    for d in 0..u {
        let n = corpus.doc_len(d) as f64;
        if n < 2.0 {
            continue;
        }
        let counts = corpus.counts(d);
        let norm = n * (n - 1.0);
        for &(i, ci) in &counts {
            let row = &mut q[i as usize * w..(i as usize + 1) * w];
            for &(j, cj) in &counts {
                row[j as usize] += ci as f64 * cj as f64 / norm;
            }
            row[i as usize] -= ci as f64 / norm;
        }
    }
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(
            "no co-occurrences for spectral init".into(),
        ));
    }
    let p: Vec<f64> = q.chunks(w).map(|r| r.iter().sum::<f64>() / total).collect();
    q.par_chunks_mut(w).zip(&p).for_each(|(row, &pi)| {
        let s = pi * total;
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    });

    let df = corpus.doc_freq();
    let min_df = 2.max(u / 20) as u32;
    let candidates: Vec<usize> = (0..w).filter(|&i| df[i] >= min_df && p[i] > 0.0).collect();
    if candidates.len() < groups {
        return Err(Error::Numerical(format!(
            "only {} anchor candidates for {groups} groups",
            candidates.len()
        )));
    }
    let mut resid: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&i| q[i * w..(i + 1) * w].to_vec())
        .collect();
    let mut anchors = Vec::with_capacity(groups);
    let mut first = 0.0;
    for step in 0..groups {
        let (best, norm) = resid
            .iter()
            .enumerate()
            .map(|(c, r)| (c, r.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if step == 0 {
            first = norm;
        }
        if !(norm > 1e-9 * first) || anchors.contains(&candidates[best]) {
            return Err(Error::Numerical(format!(
                "co-occurrence profiles have rank {step} < {groups}"
            )));
        }
        anchors.push(candidates[best]);
        let e: Vec<f64> = resid[best].iter().map(|v| v / norm).collect();
        resid.par_iter_mut().for_each(|r| {
            let dot: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(&e).for_each(|(a, b)| *a -= dot * b);
        });
    }

    let k = groups;
    let arow = |a: usize| &q[anchors[a] * w..(anchors[a] + 1) * w];
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            gram[a * k + b] = arow(a).iter().zip(arow(b)).map(|(x, y)| x * y).sum();
        }
    }
    let lmax = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(k, k, &gram))
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &e| m.max(e));
    if !(lmax > 0.0) {
        return Err(Error::Numerical("degenerate anchor profiles".into()));
    }
    let step = 1.0 / lmax;
    let weights: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|i| {
            let row = &q[i * w..(i + 1) * w];
            let b: Vec<f64> = (0..k)
                .map(|a| arow(a).iter().zip(row).map(|(x, y)| x * y).sum())
                .collect();
            let mut c = vec![1.0 / k as f64; k];
            for _ in 0..500 {
                let old = c.clone();
                for a in 0..k {
                    let grad: f64 = (0..k).map(|t| gram[a * k + t] * old[t]).sum::<f64>() - b[a];
                    c[a] = old[a] - step * grad;
                }
                project_simplex(&mut c);
                if c.iter().zip(&old).map(|(x, y)| (x - y).abs()).sum::<f64>() < 1e-12 {
                    break;
                }
            }
            c
        })
        .collect();
    let mut beta = vec![0.0; k * w];
    for i in 0..w {
        for a in 0..k {
            beta[a * w + i] = weights[i][a] * p[i];
        }
    }
    for a in 0..k {
        let row = &mut beta[a * w..(a + 1) * w];
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numerical(
                "spectral init produced an empty topic".into(),
            ));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UserProfile;
    use crate::evalkit::top_indices;
    use crate::util::sampling::categorical;

    /// Three topics over 15 words; word 5g is an anchor (only topic g emits it)
    /// and the topic's most likely word.
    fn separable(seed: u64) -> Corpus {
        let (g, w) = (3, 15);
        let mut phi = vec![0.0; g * w];
        for gi in 0..g {
            for j in 0..w {
                let anchor_of = if j % 5 == 0 { Some(j / 5) } else { None };
                phi[gi * w + j] = match anchor_of {
                    Some(a) if a == gi => 0.3,
                    Some(_) => 0.0,
                    None if j / 5 == gi => 0.1,
                    None => 0.0375,
                };
            }
        }
        let mut r = rng::seeded(seed);
        let mut tokens = Vec::new();
        for _ in 0..300 {
            let theta = dirichlet(&mut r, &[0.3; 3]);
            let doc: Vec<u32> = (0..40)
                .map(|_| {
                    let z = categorical(&mut r, &theta, 1.0);
                    categorical(&mut r, &phi[z * w..(z + 1) * w], 1.0) as u32
                })
                .collect();
            tokens.push(doc);
        }
        let users: Vec<String> = (0..300).map(|i| format!("u{i:03}")).collect();
        let profiles = users.iter().map(UserProfile::unspecified).collect();
        Corpus::new(
            (0..w).map(|j| format!("w{j:02}")).collect(),
            users,
            tokens,
            profiles,
        )
        .unwrap()
    }

    #[test]
    fn spectral_recovers_anchor_words() {
        for seed in 0..3 {
            let c = separable(seed);
            let beta = spectral_topics(&c, 3).unwrap();
            let mut tops: Vec<u32> = (0..3)
                .map(|g| top_indices(&beta[g * 15..(g + 1) * 15], 1)[0])
                .collect();
            tops.sort();
            assert_eq!(tops, vec![0, 5, 10]);
        }
    }

    #[test]
    fn spectral_rank_deficiency_falls_back() {
        // Every document is the same word pair: one profile direction only.
        let users: Vec<String> = (0..20).map(|i| format!("u{i}")).collect();
        let tokens = vec![vec![0u32, 1, 0, 1]; 20];
        let profiles = users.iter().map(UserProfile::unspecified).collect();
        let c = Corpus::new(
            vec!["a".into(), "b".into(), "c".into()],
            users,
            tokens,
            profiles,
        )
        .unwrap();
        assert!(spectral_topics(&c, 3).is_err());
        let (st, out) = init(
            &c,
            0,
            &GstmHyper {
                groups: 3,
                lda_sweeps: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.used, InitScheme::Lda);
        assert!(out.fallback_reason.is_some());
        assert_eq!(st.beta.len(), 9);
    }

    #[test]
    fn every_scheme_gives_valid_distributions() {
        let c = separable(4);
        for scheme in [InitScheme::Spectral, InitScheme::Lda, InitScheme::Random] {
            let hyper = GstmHyper {
                groups: 3,
                init: scheme,
                lda_sweeps: 10,
                seed: 2,
                ..Default::default()
            };
            let (st, out) = init(&c, 0, &hyper).unwrap();
            assert_eq!(out.used, scheme);
            for r in st.beta.chunks(15) {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(r.iter().all(|&b| b > 0.0));
            }
            assert!(st.tau.iter().all(|&t| t == 1.0));
            assert!(st.lambda.iter().all(|&l| l == 0.0) && st.gamma.iter().all(|&g| g == 0.0));
            assert_eq!(st.sigma, vec![1.0, 0.0, 0.0, 1.0]);
            let (again, _) = init(&c, 0, &hyper).unwrap();
            assert_eq!(st, again);
        }
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.8, -0.2];
        project_simplex(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
        assert!((v[0] - 0.35).abs() < 1e-12 && (v[1] - 0.65).abs() < 1e-12);
    }
}
