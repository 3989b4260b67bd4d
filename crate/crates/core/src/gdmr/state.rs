use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;

/// Bound on |x_uᵀλ_g| before exponentiation.
pub const EXP_CLAMP: f64 = 30.0;

/// α_ug = exp(clamp(x_uᵀλ_g)) + γ_g for one user. `lambda` is G × D row-major.
pub fn alpha(x_u: &[f64], lambda: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    let g = gamma.len();
    let d = x_u.len();
    if lambda.len() != g * d {
        return Err(Error::Dimension {
            what: "lambda length",
            expected: g * d,
            got: lambda.len(),
        });
    }
    if x_u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite covariate".into()));
    }
    let mut out = vec![0.0; g];
    alpha_into(x_u, lambda, gamma, &mut out);
    Ok(out)
}

/// Unchecked variant of [`alpha`] writing into `out`.
pub fn alpha_into(x_u: &[f64], lambda: &[f64], gamma: &[f64], out: &mut [f64]) {
    let d = x_u.len();
    for (k, o) in out.iter_mut().enumerate() {
        let eta: f64 = x_u
            .iter()
            .zip(&lambda[k * d..(k + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        *o = eta.clamp(-EXP_CLAMP, EXP_CLAMP).exp() + gamma[k];
    }
}

/// Token assignments, count tables and regression parameters of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdmrState {
    pub groups: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub z: Vec<Vec<u32>>,
    /// Word-major W × G counts: `n_wg[w * G + g]`.
    pub n_wg: Vec<u32>,
    /// U × G counts.
    pub n_ug: Vec<u32>,
    pub n_g: Vec<u32>,
    /// G × D coefficients.
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Cached U × G Dirichlet parameters for the current (λ, γ).
    pub alpha: Vec<f64>,
}

impl GdmrState {
    /// State with the given assignments and counts rebuilt from them.
    pub fn from_assignments(
        tokens: &[Vec<u32>],
        z: Vec<Vec<u32>>,
        groups: usize,
        vocab_size: usize,
        dim: usize,
    ) -> Self {
        let mut s = GdmrState {
            groups,
            vocab_size,
            dim,
            z,
            n_wg: Vec::new(),
            n_ug: Vec::new(),
            n_g: Vec::new(),
            lambda: vec![0.0; groups * dim],
            gamma: vec![0.0; groups],
            alpha: vec![1.0; tokens.len() * groups],
        };
        s.recount(tokens);
        s
    }

    pub fn num_users(&self) -> usize {
        self.z.len()
    }

    pub fn n_gw(&self, g: usize, w: usize) -> u32 {
        self.n_wg[w * self.groups + g]
    }

    /// Rebuild every count table from `z`.
    pub fn recount(&mut self, tokens: &[Vec<u32>]) {
        let (gs, w) = (self.groups, self.vocab_size);
        self.n_wg = vec![0; w * gs];
        self.n_ug = vec![0; tokens.len() * gs];
        self.n_g = vec![0; gs];
        for (u, (toks, zs)) in tokens.iter().zip(&self.z).enumerate() {
            for (&t, &g) in toks.iter().zip(zs) {
                self.n_wg[t as usize * gs + g as usize] += 1;
                self.n_ug[u * gs + g as usize] += 1;
                self.n_g[g as usize] += 1;
            }
        }
    }

    /// True when the incremental tables equal a full recount.
    pub fn counts_consistent(&self, tokens: &[Vec<u32>]) -> bool {
        let mut fresh = self.clone();
        fresh.recount(tokens);
        fresh.n_wg == self.n_wg && fresh.n_ug == self.n_ug && fresh.n_g == self.n_g
    }

    /// Recompute the cached α from (λ, γ) and covariates.
    pub fn refresh_alpha(&mut self, x: &CovariateMatrix) {
        let gs = self.groups;
        for u in 0..self.num_users() {
            alpha_into(
                x.row(u),
                &self.lambda,
                &self.gamma,
                &mut self.alpha[u * gs..(u + 1) * gs],
            );
        }
    }

    /// Set a symmetric α for every user (warm start).
    pub fn set_symmetric_alpha(&mut self, a: f64) {
        self.alpha.iter_mut().for_each(|v| *v = a);
    }

    /// φ̂_gw = (n_gw + β)/(n_g + Wβ), G × W.
    pub fn phi_hat(&self, beta: f64) -> Vec<f64> {
        let (gs, w) = (self.groups, self.vocab_size);
        let mut phi = vec![0.0; gs * w];
        for g in 0..gs {
            let denom = self.n_g[g] as f64 + w as f64 * beta;
            for j in 0..w {
                phi[g * w + j] = (self.n_gw(g, j) as f64 + beta) / denom;
            }
        }
        phi
    }

    /// θ̂_ug = (n_ug + α_ug)/(n_u + Σα), U × G.
    pub fn theta_hat(&self) -> Vec<f64> {
        let gs = self.groups;
        let mut theta = vec![0.0; self.num_users() * gs];
        for u in 0..self.num_users() {
            let a = &self.alpha[u * gs..(u + 1) * gs];
            let n = &self.n_ug[u * gs..(u + 1) * gs];
            let denom: f64 = a.iter().sum::<f64>() + n.iter().map(|&c| c as f64).sum::<f64>();
            for g in 0..gs {
                theta[u * gs + g] = (n[g] as f64 + a[g]) / denom;
            }
        }
        theta
    }
}
