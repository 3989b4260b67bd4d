//! Per-user variational updates.
//!
//! q(η_u) = N(η̂, V) and the token responsibilities are optimal given η̂, so the
//! per-user bound is
//!
//!   L = K/2 − ½ log|Σ| − ½ (η̂−μ)ᵀΣ⁻¹(η̂−μ) − ½ tr(Σ⁻¹V) + ½ log|V|
//!       + Σ_w c_w log Σ_g e^{η̂_g} β_gw − N log Σ_g e^{η̂_g + V_gg/2}
//!
//! where the last term is Jensen's bound on E_q log Σ_g e^{η_g}.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::state::{GstmState, Posterior};
use super::{Covariance, GstmHyper};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;
use crate::optim::{maximize, LbfgsConfig, OptStatus};
use crate::util::math::log_sum_exp;

/// Word counts of one document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserData {
    pub counts: Vec<(u32, f64)>,
    pub n: f64,
}

impl UserData {
    pub fn from_counts(counts: Vec<(u32, u32)>) -> Self {
        let counts: Vec<(u32, f64)> = counts.into_iter().map(|(w, c)| (w, c as f64)).collect();
        let n = counts.iter().map(|c| c.1).sum();
        UserData { counts, n }
    }

    pub fn from_tokens(tokens: &[u32]) -> Self {
        let mut t = tokens.to_vec();
        t.sort_unstable();
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for w in t {
            match counts.last_mut() {
                Some(last) if last.0 == w => last.1 += 1,
                _ => counts.push((w, 1)),
            }
        }
        Self::from_counts(counts)
    }

    pub fn from_corpus(corpus: &Corpus) -> Vec<Self> {
        (0..corpus.num_users())
            .map(|u| Self::from_counts(corpus.counts(u)))
            .collect()
    }
}

/// Σ⁻¹ and log|Σ|.
#[derive(Debug, Clone)]
pub(crate) struct PriorCache {
    pub k: usize,
    pub inv: Vec<f64>,
    pub logdet: f64,
}

impl PriorCache {
    pub fn new(sigma: &[f64], k: usize) -> Result<Self> {
        let m = DMatrix::from_row_slice(k, k, sigma);
        let chol = m.cholesky().ok_or_else(|| {
            Error::Numerical("prevalence covariance is not positive definite".into())
        })?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = inv[(i, j)];
            }
        }
        Ok(PriorCache {
            k,
            inv: out,
            logdet,
        })
    }

    fn quad(&self, r: &[f64], out: &mut [f64]) -> f64 {
        let k = self.k;
        let mut q = 0.0;
        for i in 0..k {
            let s: f64 = (0..k).map(|j| self.inv[i * k + j] * r[j]).sum();
            out[i] = s;
            q += r[i] * s;
        }
        q
    }
}

/// θ = softmax([η, 0]) into `theta`; returns log Σ e^{[η, 0]}.
fn theta_of(eta: &[f64], theta: &mut [f64]) -> f64 {
    let k = eta.len();
    theta[..k].copy_from_slice(eta);
    theta[k] = 0.0;
    let lse = log_sum_exp(theta);
    theta.iter_mut().for_each(|v| *v = (*v - lse).exp());
    lse
}

/// Σ_w c_w log Σ_g θ_g β_gw, accumulating its η-gradient into `grad`.
fn data_term(
    eta: &[f64],
    beta: &[f64],
    vocab: usize,
    data: &UserData,
    grad: Option<&mut [f64]>,
) -> f64 {
    let g = eta.len() + 1;
    let mut theta = vec![0.0; g];
    theta_of(eta, &mut theta);
    let mut val = 0.0;
    let mut acc = vec![0.0; g];
    for &(w, c) in &data.counts {
        let mut mix = 0.0;
        for k in 0..g {
            mix += theta[k] * beta[k * vocab + w as usize];
        }
        let mix = mix.max(f64::MIN_POSITIVE);
        val += c * mix.ln();
        for k in 0..g {
            acc[k] += c * theta[k] * beta[k * vocab + w as usize] / mix;
        }
    }
    if let Some(grad) = grad {
        for k in 0..g - 1 {
            grad[k] += acc[k] - data.n * theta[k];
        }
    }
    val
}

/// Collapsed objective log N(η; μ, Σ) + log p(w | η) up to constants.
fn collapsed(
    eta: &[f64],
    mu: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
    grad: &mut [f64],
) -> f64 {
    let r: Vec<f64> = eta.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut sr = vec![0.0; r.len()];
    let q = prior.quad(&r, &mut sr);
    grad.iter_mut().zip(&sr).for_each(|(g, s)| *g = -s);
    -0.5 * q + data_term(eta, beta, vocab, data, Some(grad))
}

fn logdet_cov(cov: &[f64], k: usize) -> Option<f64> {
    let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || cov[i * k + j] == 0.0));
    if diagonal {
        let mut s = 0.0;
        for i in 0..k {
            let v = cov[i * k + i];
            if !(v > 0.0) {
                return None;
            }
            s += v.ln();
        }
        return Some(s);
    }
    let chol = DMatrix::from_row_slice(k, k, cov).cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Jensen-bounded ELBO of one user's q. Non-finite if `cov` is not PD.
pub(crate) fn bound(
    q: &Posterior,
    mu: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
) -> f64 {
    let k = prior.k;
    let Some(logdet_v) = logdet_cov(&q.cov, k) else {
        return f64::NEG_INFINITY;
    };
    let r: Vec<f64> = q.eta.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut sr = vec![0.0; k];
    let quad = prior.quad(&r, &mut sr);
    let tr: f64 = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| prior.inv[i * k + j] * q.cov[j * k + i])
        .sum();
    let mut a = q.eta.clone();
    a.push(0.0);
    let lse = log_sum_exp(&a);
    for i in 0..k {
        a[i] += 0.5 * q.diag(i);
    }
    let lse_v = log_sum_exp(&a);
    k as f64 / 2.0 - 0.5 * prior.logdet - 0.5 * quad - 0.5 * tr
        + 0.5 * logdet_v
        + data_term(&q.eta, beta, vocab, data, None)
        + data.n * (lse - lse_v)
}

/// Bound and gradient over [η, log diag V] for a diagonal q.
fn bound_diag(
    p: &[f64],
    grad: &mut [f64],
    mu: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
) -> f64 {
    let k = prior.k;
    let (eta, s) = p.split_at(k);
    let v: Vec<f64> = s.iter().map(|x| x.exp()).collect();
    let r: Vec<f64> = eta.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut sr = vec![0.0; k];
    let quad = prior.quad(&r, &mut sr);
    let tr: f64 = (0..k).map(|i| prior.inv[i * k + i] * v[i]).sum();
    let mut theta = vec![0.0; k + 1];
    let lse = theta_of(eta, &mut theta);
    let shifted: Vec<f64> = eta.iter().zip(&v).map(|(e, vi)| e + 0.5 * vi).collect();
    let mut pi = vec![0.0; k + 1];
    let lse_v = theta_of(&shifted, &mut pi);
    let (ge, gs) = grad.split_at_mut(k);
    ge.iter_mut().for_each(|g| *g = 0.0);
    let dt = data_term(eta, beta, vocab, data, Some(ge));
    for i in 0..k {
        ge[i] += -sr[i] + data.n * (theta[i] - pi[i]);
        gs[i] = v[i] * (-0.5 * prior.inv[i * k + i] - 0.5 * data.n * pi[i]) + 0.5;
    }
    k as f64 / 2.0 - 0.5 * prior.logdet - 0.5 * quad - 0.5 * tr
        + 0.5 * s.iter().sum::<f64>()
        + dt
        + data.n * (lse - lse_v)
}

/// Bound and gradient over [η, packed Cholesky factor of V], the factor
/// stored row by row with log-diagonal entries.
fn bound_chol(
    p: &[f64],
    grad: &mut [f64],
    mu: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
) -> f64 {
    let k = prior.k;
    let (eta, packed) = p.split_at(k);
    let mut l = vec![0.0; k * k];
    let mut logdet_half = 0.0;
    for i in 0..k {
        for j in 0..=i {
            let v = packed[i * (i + 1) / 2 + j];
            l[i * k + j] = if i == j {
                logdet_half += v;
                v.exp()
            } else {
                v
            };
        }
    }
    let vdiag: Vec<f64> = (0..k)
        .map(|i| (0..=i).map(|j| l[i * k + j] * l[i * k + j]).sum())
        .collect();
    // Σ⁻¹L, row-major.
    let mut sl = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            sl[i * k + j] = (0..k).map(|t| prior.inv[i * k + t] * l[t * k + j]).sum();
        }
    }
    let tr: f64 = (0..k * k).map(|i| sl[i] * l[i]).sum();
    let r: Vec<f64> = eta.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut sr = vec![0.0; k];
    let quad = prior.quad(&r, &mut sr);
    let mut theta = vec![0.0; k + 1];
    let lse = theta_of(eta, &mut theta);
    let shifted: Vec<f64> = eta.iter().zip(&vdiag).map(|(e, v)| e + 0.5 * v).collect();
    let mut pi = vec![0.0; k + 1];
    let lse_v = theta_of(&shifted, &mut pi);
    let (ge, gl) = grad.split_at_mut(k);
    ge.iter_mut().for_each(|g| *g = 0.0);
    let dt = data_term(eta, beta, vocab, data, Some(ge));
    for i in 0..k {
        ge[i] += -sr[i] + data.n * (theta[i] - pi[i]);
        for j in 0..=i {
            let g = -sl[i * k + j] - data.n * pi[i] * l[i * k + j];
            gl[i * (i + 1) / 2 + j] = if i == j { l[i * k + j] * g + 1.0 } else { g };
        }
    }
    k as f64 / 2.0 - 0.5 * prior.logdet - 0.5 * quad - 0.5 * tr
        + logdet_half
        + dt
        + data.n * (lse - lse_v)
}

fn pack_cholesky(cov: &[f64], k: usize) -> Option<Vec<f64>> {
    let ch = DMatrix::from_row_slice(k, k, cov).cholesky()?;
    let l = ch.l();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Some(out)
}

fn unpack_cholesky(packed: &[f64], k: usize) -> Vec<f64> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let v = packed[i * (i + 1) / 2 + j];
            l[i * k + j] = if i == j { v.exp() } else { v };
        }
    }
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            v[i * k + j] = (0..k).map(|t| l[i * k + t] * l[j * k + t]).sum();
        }
    }
    v
}

/// −∇² of the collapsed objective at η.
fn neg_hessian(
    eta: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
) -> Vec<f64> {
    let k = prior.k;
    let g = k + 1;
    let mut theta = vec![0.0; g];
    theta_of(eta, &mut theta);
    let mut h = prior.inv.clone();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += data.n * (if i == j { theta[i] } else { 0.0 } - theta[i] * theta[j]);
        }
    }
    let mut rho = vec![0.0; g];
    for &(w, c) in &data.counts {
        let mut mix = 0.0;
        for t in 0..g {
            rho[t] = theta[t] * beta[t * vocab + w as usize];
            mix += rho[t];
        }
        let mix = mix.max(f64::MIN_POSITIVE);
        rho.iter_mut().for_each(|r| *r /= mix);
        for i in 0..k {
            for j in 0..k {
                h[i * k + j] -= c * (if i == j { rho[i] } else { 0.0 } - rho[i] * rho[j]);
            }
        }
    }
    h
}

fn laplace_cov(
    eta: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    data: &UserData,
    mode: Covariance,
) -> Vec<f64> {
    let k = prior.k;
    let h = neg_hessian(eta, prior, beta, vocab, data);
    let diag_fallback = || {
        let mut c = vec![0.0; k * k];
        for i in 0..k {
            let p = h[i * k + i];
            c[i * k + i] = if p > 0.0 {
                1.0 / p
            } else {
                1.0 / prior.inv[i * k + i]
            };
        }
        c
    };
    match mode {
        Covariance::Diagonal => diag_fallback(),
        Covariance::Full => match DMatrix::from_row_slice(k, k, &h).cholesky() {
            Some(ch) => {
                let inv = ch.inverse();
                let mut c = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        c[i * k + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                    }
                }
                c
            }
            None => diag_fallback(),
        },
    }
}

/// Updated q for one user: the Laplace approximation at the collapsed mode,
/// compared with `old` under the current parameters; the better one is then
/// refined by direct ascent on the bound. Returns the new q,
/// its bound and whether mode finding failed (in which case `old` is kept).
#[allow(clippy::too_many_arguments)]
pub fn user_posterior(
    data: &UserData,
    mu: &[f64],
    prior_cov: &[f64],
    beta: &[f64],
    vocab: usize,
    old: &Posterior,
    mode: Covariance,
    cfg: &LbfgsConfig,
) -> Result<(Posterior, f64, bool)> {
    let prior = PriorCache::new(prior_cov, mu.len())?;
    Ok(update(data, mu, &prior, beta, vocab, old, mode, cfg))
}

#[allow(clippy::too_many_arguments)]
fn update(
    data: &UserData,
    mu: &[f64],
    prior: &PriorCache,
    beta: &[f64],
    vocab: usize,
    old: &Posterior,
    mode: Covariance,
    cfg: &LbfgsConfig,
) -> (Posterior, f64, bool) {
    let k = prior.k;
    let old_bound = bound(old, mu, prior, beta, vocab, data);
    let (eta, _, trace) = maximize(
        |x, g| collapsed(x, mu, prior, beta, vocab, data, g),
        &old.eta,
        cfg,
    );
    let diverged = trace.status == OptStatus::NonFinite || eta.iter().any(|v| !v.is_finite());
    let (mut best, mut best_bound) = (old.clone(), old_bound);
    if !diverged {
        let cov = laplace_cov(&eta, prior, beta, vocab, data, mode);
        let cand = Posterior::new(eta, cov);
        let b = bound(&cand, mu, prior, beta, vocab, data);
        if b > best_bound || !best_bound.is_finite() {
            best = cand;
            best_bound = b;
        }
    }
    if best_bound.is_finite() {
        // Refine by direct ascent on the bound in the chosen parameterization.
        let polished = match mode {
            Covariance::Diagonal => {
                let mut p0 = best.eta.clone();
                p0.extend((0..k).map(|i| best.diag(i).ln()));
                let (p, val, _) = maximize(
                    |x, g| bound_diag(x, g, mu, prior, beta, vocab, data),
                    &p0,
                    cfg,
                );
                let mut cov = vec![0.0; k * k];
                for i in 0..k {
                    cov[i * k + i] = p[k + i].exp();
                }
                (val, Posterior::new(p[..k].to_vec(), cov))
            }
            Covariance::Full => match pack_cholesky(&best.cov, k) {
                Some(packed) => {
                    let mut p0 = best.eta.clone();
                    p0.extend(packed);
                    let (p, val, _) = maximize(
                        |x, g| bound_chol(x, g, mu, prior, beta, vocab, data),
                        &p0,
                        cfg,
                    );
                    (
                        val,
                        Posterior::new(p[..k].to_vec(), unpack_cholesky(&p[k..], k)),
                    )
                }
                None => (f64::NEG_INFINITY, best.clone()),
            },
        };
        if polished.0.is_finite() && polished.0 > best_bound {
            // Re-evaluate through the general path so the reported bound is
            // exactly the one the caller will recompute.
            let b = bound(&polished.1, mu, prior, beta, vocab, data);
            if b > best_bound {
                best = polished.1;
                best_bound = b;
            }
        }
    }
    (best, best_bound, diverged)
}

/// Per-user bound of an existing q under the given parameters.
pub fn user_bound(state: &GstmState, q: &Posterior, x_u: &[f64], data: &UserData) -> Result<f64> {
    let prior = PriorCache::new(&state.sigma, state.free())?;
    Ok(bound(
        q,
        &state.mu(x_u),
        &prior,
        &state.beta,
        state.vocab_size,
        data,
    ))
}

/// Token responsibilities φ_wg ∝ e^{η̂_g} β_gw, added as c_w φ_wg into the
/// G × W expected counts.
pub(crate) fn add_expected_counts(
    eta: &[f64],
    beta: &[f64],
    vocab: usize,
    data: &UserData,
    out: &mut [f64],
) {
    let g = eta.len() + 1;
    let mut theta = vec![0.0; g];
    theta_of(eta, &mut theta);
    let mut rho = vec![0.0; g];
    for &(w, c) in &data.counts {
        let mut mix = 0.0;
        for t in 0..g {
            rho[t] = theta[t] * beta[t * vocab + w as usize];
            mix += rho[t];
        }
        let mix = mix.max(f64::MIN_POSITIVE);
        for t in 0..g {
            out[t * vocab + w as usize] += c * rho[t] / mix;
        }
    }
}

/// Result of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub posts: Vec<Posterior>,
    pub bounds: Vec<f64>,
    /// Users whose mode search diverged and kept their previous q.
    pub fallbacks: usize,
    /// G × W expected word counts per group.
    pub expected: Vec<f64>,
}

impl EStep {
    pub fn total(&self) -> f64 {
        self.bounds.iter().sum()
    }
}

const CHUNK: usize = 64;

/// Update every user's q under the parameters in `state` (the posteriors in
/// `state.posts` are the starting points) and collect expected counts.
pub fn e_step(
    state: &GstmState,
    data: &[UserData],
    x: &CovariateMatrix,
    hyper: &GstmHyper,
) -> Result<EStep> {
    if data.len() != state.posts.len() || x.rows != data.len() {
        return Err(Error::Dimension {
            what: "E-step users",
            expected: state.posts.len(),
            got: data.len().min(x.rows),
        });
    }
    let prior = PriorCache::new(&state.sigma, state.free())?;
    let (g, w) = (state.groups, state.vocab_size);
    let u = data.len();
    let mut posts = Vec::with_capacity(u);
    let mut bounds = Vec::with_capacity(u);
    let mut fallbacks = 0;
    let mut expected = vec![0.0; g * w];
    // Dense per-chunk count tables are merged in chunk order, a bounded
    // window at a time, so the sum is independent of scheduling.
    let chunks: Vec<usize> = (0..u).step_by(CHUNK).collect();
    let window = rayon::current_num_threads().max(1) * 2;
    for win in chunks.chunks(window) {
        let parts: Vec<_> = win
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK).min(u);
                let mut local = vec![0.0; g * w];
                let mut out = Vec::with_capacity(end - start);
                let mut fb = 0;
                for i in start..end {
                    let mu = state.mu(x.row(i));
                    let (q, b, d) = update(
                        &data[i],
                        &mu,
                        &prior,
                        &state.beta,
                        w,
                        &state.posts[i],
                        hyper.covariance,
                        &hyper.estep,
                    );
                    fb += d as usize;
                    add_expected_counts(&q.eta, &state.beta, w, &data[i], &mut local);
                    out.push((q, b));
                }
                (out, local, fb)
            })
            .collect();
        for (out, local, fb) in parts {
            for (q, b) in out {
                posts.push(q);
                bounds.push(b);
            }
            expected.iter_mut().zip(local).for_each(|(a, v)| *a += v);
            fallbacks += fb;
        }
    }
    if fallbacks > 0 {
        log::warn!(
            "E-step: {fallbacks} users kept their previous posterior after a diverged mode search"
        );
    }
    Ok(EStep {
        posts,
        bounds,
        fallbacks,
        expected,
    })
}

/// log ∫ N(η; μ, Σ) p(w | η, β) dη by a tensor grid over standardized
/// coordinates. Only for K ≤ 2; used as a test oracle.
pub fn quadrature_log_marginal(
    data: &UserData,
    mu: &[f64],
    sigma: &[f64],
    beta: &[f64],
    vocab: usize,
    points: usize,
) -> f64 {
    let k = mu.len();
    assert!(
        k == 1 || k == 2,
        "quadrature supports one or two free coordinates"
    );
    let l = DMatrix::from_row_slice(k, k, sigma)
        .cholesky()
        .expect("Σ must be PD")
        .l();
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / (points - 1) as f64;
    let nodes: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
    // Trapezoid weights in log space.
    let lw: Vec<f64> = (0..points)
        .map(|i| {
            if i == 0 || i == points - 1 {
                (h / 2.0).ln()
            } else {
                h.ln()
            }
        })
        .collect();
    let ln_phi = |z: f64| -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut terms = Vec::with_capacity(points.pow(k as u32));
    let mut eval = |zs: &[f64], weight: f64| {
        let z = DVector::from_column_slice(zs);
        let eta: Vec<f64> = (l.clone() * z).iter().zip(mu).map(|(a, b)| a + b).collect();
        let lp: f64 = zs.iter().map(|&v| ln_phi(v)).sum();
        terms.push(weight + lp + data_term(&eta, beta, vocab, data, None));
    };
    if k == 1 {
        for i in 0..points {
            eval(&[nodes[i]], lw[i]);
        }
    } else {
        for i in 0..points {
            for j in 0..points {
                eval(&[nodes[i], nodes[j]], lw[i] + lw[j]);
            }
        }
    }
    log_sum_exp(&terms)
}
