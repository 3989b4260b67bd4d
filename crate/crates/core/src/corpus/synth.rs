//! Synthetic corpora sampled from the two generative processes.
//!
//! Vocabulary and user ids are zero-padded (`w007`, `u0042`) so that their
//! lexicographic order equals index order and a corpus survives an
//! emit/ingest round trip with identical indices.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{AgeBucket, Corpus, Gender, Post, UserProfile};
use crate::error::{Error, Result};
use crate::netembed::{covariates, CovariateMatrix, EncodingConfig, EMB_PREFIX};
use crate::util::math::softmax_in_place;
use crate::util::rng::{self, Rng as ChaRng};
use crate::util::sampling::{categorical, dirichlet};

const COUNTRIES: [&str; 6] = ["AU", "CA", "DE", "IN", "UK", "US"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub vocab: usize,
    pub groups: usize,
    /// Number of embedding-like covariate columns.
    pub emb_dim: usize,
    /// Tokens per user.
    pub doc_len: usize,
    /// Add uniformly drawn demographics (and their one-hot columns).
    pub demographics: bool,
    /// Symmetric Dirichlet prior on topic-word distributions (gDMR); matches
    /// the default fitting prior.
    pub beta: f64,
    /// Prior mean and std of regression coefficients.
    pub mu: f64,
    pub sigma: f64,
    /// Laplace scale of the gSTM word deviations; 0 disables them.
    pub kappa_scale: f64,
    /// gSTM prevalence covariance is `eta_scale² I`; 0 makes θ deterministic.
    pub eta_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            vocab: 100,
            groups: 4,
            emb_dim: 8,
            doc_len: 50,
            demographics: false,
            beta: 0.01,
            mu: 0.0,
            sigma: 1.0,
            kappa_scale: 1.0,
            eta_scale: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::Config(
                "synthetic corpora need at least 2 groups".into(),
            ));
        }
        if self.vocab < self.groups {
            return Err(Error::Config(
                "vocabulary must be at least as large as the group count".into(),
            ));
        }
        if self.users == 0 {
            return Err(Error::Config(
                "synthetic corpora need at least one user".into(),
            ));
        }
        if !(self.beta > 0.0
            && self.sigma >= 0.0
            && self.kappa_scale >= 0.0
            && self.eta_scale >= 0.0)
        {
            return Err(Error::Config(
                "synthetic priors must be non-negative (beta positive)".into(),
            ));
        }
        Ok(())
    }
}

/// Every latent variable drawn while sampling a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: usize,
    /// G × W topic-word distributions (β for gSTM).
    pub phi: Vec<f64>,
    /// U × G topic proportions.
    pub theta: Vec<f64>,
    pub z: Vec<Vec<u32>>,
    /// G × D regression coefficients.
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// U × G Dirichlet parameters (gDMR only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    /// (G−1) × (G−1) prevalence covariance (gSTM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_cov: Option<Vec<f64>>,
    /// Planted community per user (community corpora only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub community: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub covariates: CovariateMatrix,
    pub truth: GroundTruth,
    /// Reply records; empty unless the generator plants a network.
    pub replies: Vec<Post>,
}

fn padded(prefix: &str, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

fn random_profile<R: Rng + ?Sized>(rng: &mut R, id: String) -> UserProfile {
    UserProfile {
        user_id: id,
        gender: Gender::ALL[rng.random_range(0..Gender::ALL.len())],
        age_bucket: AgeBucket::ALL[rng.random_range(0..AgeBucket::ALL.len())],
        country: Some(COUNTRIES[rng.random_range(0..COUNTRIES.len())].to_string()),
        membership_year: Some(rng.random_range(2005..2017)),
        forums: Vec::new(),
    }
}

fn users_and_profiles(cfg: &SynthConfig, rng: &mut ChaRng) -> (Vec<String>, Vec<UserProfile>) {
    let users: Vec<String> = (0..cfg.users).map(|u| padded("u", u, cfg.users)).collect();
    let profiles = users
        .iter()
        .map(|id| {
            if cfg.demographics {
                random_profile(rng, id.clone())
            } else {
                UserProfile::unspecified(id.clone())
            }
        })
        .collect();
    (users, profiles)
}

/// Demographic one-hot block (if enabled) followed by `emb_dim` columns drawn
/// i.i.d. Normal(0, 1/D) so that ‖x_emb‖ ≈ 1.
fn synth_covariates(
    cfg: &SynthConfig,
    profiles: &[UserProfile],
    rng: &mut ChaRng,
) -> Result<CovariateMatrix> {
    let demo = if cfg.demographics {
        covariates(
            profiles,
            None,
            &EncodingConfig {
                embedding: false,
                ..Default::default()
            },
        )?
    } else {
        CovariateMatrix::empty(cfg.users)
    };
    let d = cfg.emb_dim;
    let sd = if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 };
    let cols = demo.cols + d;
    let mut data = Vec::with_capacity(cfg.users * cols);
    for u in 0..cfg.users {
        data.extend_from_slice(demo.row(u));
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            data.push(z * sd);
        }
    }
    let mut columns = demo.columns;
    columns.extend((0..d).map(|k| format!("{EMB_PREFIX}{k}")));
    CovariateMatrix::new(cfg.users, columns, data)
}

fn draw_tokens(
    rng: &mut ChaRng,
    theta: &[f64],
    phi: &[f64],
    w: usize,
    n: usize,
) -> (Vec<u32>, Vec<u32>) {
    let mut toks = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for _ in 0..n {
        let g = categorical(rng, theta, 1.0);
        let word = categorical(rng, &phi[g * w..(g + 1) * w], 1.0);
        zs.push(g as u32);
        toks.push(word as u32);
    }
    (toks, zs)
}

fn vocab(cfg: &SynthConfig) -> Vec<String> {
    (0..cfg.vocab).map(|i| padded("w", i, cfg.vocab)).collect()
}

/// Sample from the gDMR generative process: φ_g ~ Dir(β), γ_g ~ Gamma(1,1),
/// λ_g ~ N(μ, σ²I), α_ug = exp(x_uᵀλ_g) + γ_g, θ_u ~ Dir(α_u), then z and w.
pub fn synth_gdmr(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let (g, w) = (cfg.groups, cfg.vocab);
    let mut rng = rng::stream(cfg.seed, &[0x5917, 1]);
    let (users, profiles) = users_and_profiles(cfg, &mut rng);
    let x = synth_covariates(cfg, &profiles, &mut rng)?;
    let d = x.cols;

    let mut phi = Vec::with_capacity(g * w);
    for _ in 0..g {
        phi.extend(dirichlet(&mut rng, &vec![cfg.beta; w]));
    }
    let gamma: Vec<f64> = (0..g).map(|_| Exp1.sample(&mut rng)).collect();
    let normal = Normal::new(cfg.mu, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let lambda: Vec<f64> = (0..g * d).map(|_| normal.sample(&mut rng)).collect();

    let mut alpha = Vec::with_capacity(cfg.users * g);
    let mut theta = Vec::with_capacity(cfg.users * g);
    let mut tokens = Vec::with_capacity(cfg.users);
    let mut z = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let xu = x.row(u);
        let a: Vec<f64> = (0..g)
            .map(|k| {
                let eta: f64 = xu
                    .iter()
                    .zip(&lambda[k * d..(k + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                eta.clamp(-30.0, 30.0).exp() + gamma[k]
            })
            .collect();
        let th = dirichlet(&mut rng, &a);
        let (t, zs) = draw_tokens(&mut rng, &th, &phi, w, cfg.doc_len);
        alpha.extend_from_slice(&a);
        theta.extend_from_slice(&th);
        tokens.push(t);
        z.push(zs);
    }
    let corpus = Corpus::new(vocab(cfg), users, tokens, profiles)?;
    Ok(Synthetic {
        corpus,
        covariates: x,
        truth: GroundTruth {
            groups: g,
            phi,
            theta,
            z,
            lambda,
            gamma,
            alpha: Some(alpha),
            m: None,
            kappa: None,
            sigma_cov: None,
            community: None,
        },
        replies: Vec::new(),
    })
}

/// Sample from the gSTM generative process with group G as the logistic-normal
/// reference: m_w = log-softmax of N(0,1) draws, κ ~ Laplace(0, kappa_scale),
/// β_g ∝ exp(m + κ_g), μ_ug = x_uᵀλ_g + γ_g, η_u ~ N(μ_u, Σ), θ_u = softmax(η_u, 0).
pub fn synth_gstm(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let (g, w) = (cfg.groups, cfg.vocab);
    let k = g - 1;
    let mut rng = rng::stream(cfg.seed, &[0x5917, 2]);
    let (users, profiles) = users_and_profiles(cfg, &mut rng);
    let x = synth_covariates(cfg, &profiles, &mut rng)?;
    let d = x.cols;

    let mut m: Vec<f64> = (0..w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let lse = softmax_in_place(&mut m.clone());
    m.iter_mut().for_each(|v| *v -= lse);

    let mut kappa = vec![0.0; g * w];
    if cfg.kappa_scale > 0.0 {
        for v in kappa.iter_mut() {
            let e: f64 = Exp1.sample(&mut rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *v = sign * e * cfg.kappa_scale;
        }
    }
    let mut phi = Vec::with_capacity(g * w);
    for gi in 0..g {
        let mut row: Vec<f64> = (0..w).map(|j| m[j] + kappa[gi * w + j]).collect();
        softmax_in_place(&mut row);
        phi.extend(row);
    }

    let normal = Normal::new(cfg.mu, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut lambda = vec![0.0; g * d];
    let mut gamma = vec![0.0; g];
    for gi in 0..k {
        for j in 0..d {
            lambda[gi * d + j] = normal.sample(&mut rng);
        }
        gamma[gi] = StandardNormal.sample(&mut rng);
    }
    let mut sigma_cov = vec![0.0; k * k];
    for i in 0..k {
        sigma_cov[i * k + i] = cfg.eta_scale * cfg.eta_scale;
    }

    let mut theta = Vec::with_capacity(cfg.users * g);
    let mut tokens = Vec::with_capacity(cfg.users);
    let mut z = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let xu = x.row(u);
        let mut eta = vec![0.0; g];
        for gi in 0..k {
            let mu: f64 = xu
                .iter()
                .zip(&lambda[gi * d..(gi + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + gamma[gi];
            let e: f64 = StandardNormal.sample(&mut rng);
            eta[gi] = mu + cfg.eta_scale * e;
        }
        softmax_in_place(&mut eta);
        let (t, zs) = draw_tokens(&mut rng, &eta, &phi, w, cfg.doc_len);
        theta.extend_from_slice(&eta);
        tokens.push(t);
        z.push(zs);
    }
    let corpus = Corpus::new(vocab(cfg), users, tokens, profiles)?;
    Ok(Synthetic {
        corpus,
        covariates: x,
        truth: GroundTruth {
            groups: g,
            phi,
            theta,
            z,
            lambda,
            gamma,
            alpha: None,
            m: Some(m),
            kappa: Some(kappa),
            sigma_cov: Some(sigma_cov),
            community: None,
        },
        replies: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommunityConfig {
    pub users: usize,
    pub vocab: usize,
    pub groups: usize,
    pub communities: usize,
    pub doc_len: usize,
    /// Replies written per user.
    pub replies_per_user: usize,
    /// Probability a reply stays inside the author's community.
    pub p_within: f64,
    /// Dirichlet mass on the community's favoured topic versus the others.
    pub alpha_major: f64,
    pub alpha_minor: f64,
    pub beta: f64,
    pub demographics: bool,
    pub seed: u64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig {
            users: 300,
            vocab: 120,
            groups: 4,
            communities: 4,
            doc_len: 30,
            replies_per_user: 8,
            p_within: 0.9,
            alpha_major: 2.0,
            alpha_minor: 0.1,
            beta: 0.05,
            demographics: true,
            seed: 0,
        }
    }
}

/// A corpus whose topic prevalence is driven by planted network communities.
///
/// Users are split evenly (then shuffled) into communities. Community c
/// favours topic c mod G. Each user writes `replies_per_user` replies whose
/// target is drawn from the same community with probability `p_within`.
/// Community c is also the user's forum, `forum-c`. The returned covariates
/// hold demographics only; embeddings are expected to come from the reply graph.
pub fn synth_community(cfg: &CommunityConfig) -> Result<Synthetic> {
    if cfg.communities == 0 || cfg.groups < 2 || cfg.vocab < cfg.groups || cfg.users < 2 {
        return Err(Error::Config(
            "community corpus needs ≥1 community, ≥2 groups, ≥2 users, W ≥ G".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_within)
        || cfg.alpha_major <= 0.0
        || cfg.alpha_minor <= 0.0
        || cfg.beta <= 0.0
    {
        return Err(Error::Config("invalid community corpus priors".into()));
    }
    let (g, w, n) = (cfg.groups, cfg.vocab, cfg.users);
    let mut rng = rng::stream(cfg.seed, &[0x5917, 3]);
    let base = SynthConfig {
        users: n,
        vocab: w,
        groups: g,
        demographics: cfg.demographics,
        ..Default::default()
    };
    let (users, mut profiles) = users_and_profiles(&base, &mut rng);

    let mut community: Vec<usize> = (0..n).map(|u| u % cfg.communities).collect();
    community.shuffle(&mut rng);
    let mut members = vec![Vec::new(); cfg.communities];
    for (u, &c) in community.iter().enumerate() {
        members[c].push(u);
        profiles[u].forums = vec![format!("forum-{c}")];
    }

    let mut phi = Vec::with_capacity(g * w);
    for _ in 0..g {
        phi.extend(dirichlet(&mut rng, &vec![cfg.beta; w]));
    }
    let mut alpha = Vec::with_capacity(n * g);
    let mut theta = Vec::with_capacity(n * g);
    let mut tokens = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for &c in &community {
        let a: Vec<f64> = (0..g)
            .map(|k| {
                if k == c % g {
                    cfg.alpha_major
                } else {
                    cfg.alpha_minor
                }
            })
            .collect();
        let th = dirichlet(&mut rng, &a);
        let (t, zs) = draw_tokens(&mut rng, &th, &phi, w, cfg.doc_len);
        alpha.extend_from_slice(&a);
        theta.extend_from_slice(&th);
        tokens.push(t);
        z.push(zs);
    }

    let mut replies = Vec::with_capacity(n * cfg.replies_per_user);
    for u in 0..n {
        let own = &members[community[u]];
        for r in 0..cfg.replies_per_user {
            let target = loop {
                let t = if own.len() > 1 && rng.random::<f64>() < cfg.p_within {
                    own[rng.random_range(0..own.len())]
                } else {
                    rng.random_range(0..n)
                };
                if t != u {
                    break t;
                }
            };
            replies.push(Post {
                post_id: format!("{}-r{r}", users[u]),
                author_id: users[u].clone(),
                reply_to_author_id: Some(users[target].clone()),
                body: String::new(),
                timestamp: None,
                forum: Some(format!("forum-{}", community[u])),
            });
        }
    }

    let x = if cfg.demographics {
        covariates(
            &profiles,
            None,
            &EncodingConfig {
                embedding: false,
                ..Default::default()
            },
        )?
    } else {
        CovariateMatrix::empty(n)
    };
    let corpus = Corpus::new(vocab(&base), users, tokens, profiles)?;
    Ok(Synthetic {
        corpus,
        covariates: x,
        truth: GroundTruth {
            groups: g,
            phi,
            theta,
            z,
            lambda: Vec::new(),
            gamma: Vec::new(),
            alpha: Some(alpha),
            m: None,
            kappa: None,
            sigma_cov: None,
            community: Some(community),
        },
        replies,
    })
}
