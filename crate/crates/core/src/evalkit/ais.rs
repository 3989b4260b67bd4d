//! Annealed importance sampling of held-out log-likelihood under a fitted
//! Dirichlet-multinomial topic model.
//!
//! Intermediate targets are P_s(z) ∝ P(z | α) P(w | z, Φ)^{τ_s}. A chain starts
//! from the prior (a Pólya urn draw), and for s = 1..S accumulates
//! (τ_s − τ_{s−1}) log P(w | z^{(s−1)}, Φ) before a Gibbs sweep targeting P_s.
//! Weights stay in log space throughout.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::math::{ln_gamma, log_sum_exp};
use crate::util::rng;
use crate::util::sampling::categorical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Linear,
    /// τ_s = 10^{−4(1 − s/S)} for s ≥ 1.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AisConfig {
    pub temps: usize,
    pub schedule: Schedule,
    pub runs: usize,
    pub gibbs_steps: usize,
    pub seed: u64,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig {
            temps: 1000,
            schedule: Schedule::Linear,
            runs: 10,
            gibbs_steps: 1,
            seed: 0,
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temps == 0 || self.runs == 0 {
            return Err(Error::Config(
                "AIS needs at least one temperature and one run".into(),
            ));
        }
        Ok(())
    }

    /// τ_0 = 0, …, τ_S = 1, non-decreasing.
    pub fn temperatures(&self) -> Vec<f64> {
        let s = self.temps;
        (0..=s)
            .map(|i| match (i, self.schedule) {
                (0, _) => 0.0,
                (i, _) if i == s => 1.0,
                (i, Schedule::Linear) => i as f64 / s as f64,
                (i, Schedule::Geometric) => 10f64.powf(-4.0 * (1.0 - i as f64 / s as f64)),
            })
            .collect()
    }
}

/// log Σ_z P(z | α) Π_i φ_{z_i, w_i} by enumerating all Gᴺ assignments.
/// Only for tiny documents; used as a test oracle.
pub fn exact_log_marginal(
    phi: &[f64],
    groups: usize,
    vocab: usize,
    alpha: &[f64],
    tokens: &[u32],
) -> f64 {
    let n = tokens.len();
    let total = groups.pow(n as u32);
    let sum_a: f64 = alpha.iter().sum();
    let mut terms = Vec::with_capacity(total);
    let mut z = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for zi in z.iter_mut() {
            *zi = c % groups;
            c /= groups;
        }
        let mut counts = vec![0usize; groups];
        let mut lw = 0.0;
        for (i, &g) in z.iter().enumerate() {
            counts[g] += 1;
            lw += phi[g * vocab + tokens[i] as usize].ln();
        }
        let mut lp = ln_gamma(sum_a) - ln_gamma(sum_a + n as f64);
        for g in 0..groups {
            lp += ln_gamma(alpha[g] + counts[g] as f64) - ln_gamma(alpha[g]);
        }
        terms.push(lp + lw);
    }
    log_sum_exp(&terms)
}

/// log importance weight of one AIS chain for one document.
pub fn ais_chain<R: Rng + ?Sized>(
    phi: &[f64],
    groups: usize,
    vocab: usize,
    alpha: &[f64],
    tokens: &[u32],
    temps: &[f64],
    gibbs_steps: usize,
    rng: &mut R,
) -> f64 {
    let n = tokens.len();
    let lphi = |g: usize, w: u32| phi[g * vocab + w as usize].ln();
    let mut z = vec![0usize; n];
    let mut counts = vec![0.0f64; groups];
    let mut weights = vec![0.0; groups];
    // Pólya urn draw from P(z | α).
    for zi in z.iter_mut() {
        let mut total = 0.0;
        for g in 0..groups {
            weights[g] = counts[g] + alpha[g];
            total += weights[g];
        }
        let g = categorical(rng, &weights, total);
        *zi = g;
        counts[g] += 1.0;
    }
    let mut logw = 0.0;
    let s_max = temps.len() - 1;
    let mut lw = vec![0.0; groups];
    for s in 1..=s_max {
        let loglik: f64 = z.iter().zip(tokens).map(|(&g, &w)| lphi(g, w)).sum();
        logw += (temps[s] - temps[s - 1]) * loglik;
        if s == s_max {
            break;
        }
        let tau = temps[s];
        for _ in 0..gibbs_steps {
            for i in 0..n {
                counts[z[i]] -= 1.0;
                for g in 0..groups {
                    lw[g] = (counts[g] + alpha[g]).ln() + tau * lphi(g, tokens[i]);
                }
                let lse = log_sum_exp(&lw);
                for g in 0..groups {
                    weights[g] = (lw[g] - lse).exp();
                }
                let g = categorical(rng, &weights, weights.iter().sum());
                z[i] = g;
                counts[g] += 1.0;
            }
        }
    }
    logw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEstimate {
    pub user: usize,
    pub tokens: usize,
    pub log_likelihood: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisResult {
    pub total: f64,
    pub per_token: f64,
    /// Delta-method standard error of `total`, from the spread of the M weights.
    pub stderr: f64,
    pub tokens: usize,
    pub users: Vec<UserEstimate>,
    /// Users with no in-vocabulary tokens.
    pub excluded_users: usize,
}

/// log (1/M Σ exp l_m) and its delta-method standard error.
pub fn combine_log_weights(logw: &[f64]) -> (f64, f64) {
    let m = logw.len() as f64;
    let lse = log_sum_exp(logw);
    let est = lse - m.ln();
    if logw.len() < 2 {
        return (est, f64::NAN);
    }
    // Weights relative to their mean: r_m = exp(l_m − est), mean 1.
    let r: Vec<f64> = logw.iter().map(|l| (l - est).exp()).collect();
    let var = r.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (m - 1.0);
    (est, (var / m).sqrt())
}

/// AIS estimate summed over held-out documents. `alphas` is U × G (one
/// Dirichlet parameter vector per held-out user) and `docs` holds token
/// indices already mapped into the model vocabulary.
pub fn ais_heldout(
    phi: &[f64],
    groups: usize,
    vocab: usize,
    alphas: &[f64],
    docs: &[Vec<u32>],
    cfg: &AisConfig,
) -> Result<AisResult> {
    cfg.validate()?;
    if phi.len() != groups * vocab || alphas.len() != docs.len() * groups {
        return Err(Error::Dimension {
            what: "AIS model shapes",
            expected: groups * vocab + docs.len() * groups,
            got: phi.len() + alphas.len(),
        });
    }
    if docs.iter().flatten().any(|&w| w as usize >= vocab) {
        return Err(Error::InvalidInput(
            "held-out token outside model vocabulary".into(),
        ));
    }
    let temps = cfg.temperatures();
    let jobs: Vec<(usize, usize)> = (0..docs.len())
        .filter(|&u| !docs[u].is_empty())
        .flat_map(|u| (0..cfg.runs).map(move |r| (u, r)))
        .collect();
    let logw: Vec<f64> = jobs
        .par_iter()
        .map(|&(u, r)| {
            let mut rng = rng::stream(cfg.seed, &[0xA15, u as u64, r as u64]);
            ais_chain(
                phi,
                groups,
                vocab,
                &alphas[u * groups..(u + 1) * groups],
                &docs[u],
                &temps,
                cfg.gibbs_steps,
                &mut rng,
            )
        })
        .collect();
    let mut users = Vec::new();
    for (k, chunk) in logw.chunks(cfg.runs).enumerate() {
        let u = jobs[k * cfg.runs].0;
        let (ll, se) = combine_log_weights(chunk);
        users.push(UserEstimate {
            user: u,
            tokens: docs[u].len(),
            log_likelihood: ll,
            stderr: se,
        });
    }
    let total: f64 = users.iter().map(|e| e.log_likelihood).sum();
    let tokens: usize = users.iter().map(|e| e.tokens).sum();
    let stderr = users
        .iter()
        .map(|e| e.stderr * e.stderr)
        .sum::<f64>()
        .sqrt();
    Ok(AisResult {
        total,
        per_token: if tokens > 0 {
            total / tokens as f64
        } else {
            f64::NAN
        },
        stderr,
        tokens,
        excluded_users: docs.iter().filter(|d| d.is_empty()).count(),
        users,
    })
}
