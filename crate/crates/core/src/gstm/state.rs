use serde::{Deserialize, Serialize};

use crate::util::math::softmax_in_place;

/// Gaussian q(η_u) = N(eta, cov) over the G − 1 free coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub eta: Vec<f64>,
    /// K × K, diagonal unless full covariance is requested.
    pub cov: Vec<f64>,
}

impl Posterior {
    pub fn new(eta: Vec<f64>, cov: Vec<f64>) -> Self {
        Posterior { eta, cov }
    }

    pub fn diag(&self, k: usize) -> f64 {
        self.cov[k * self.eta.len() + k]
    }

    /// Plug-in group proportions softmax([η, 0]).
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.eta.clone();
        t.push(0.0);
        softmax_in_place(&mut t);
        t
    }
}

/// Model parameters plus the per-user variational posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstmState {
    pub groups: usize,
    pub vocab_size: usize,
    pub dim: usize,
    /// Baseline log-frequencies, length W.
    pub m: Vec<f64>,
    /// G × W deviations.
    pub kappa: Vec<f64>,
    /// G × W Laplace scales.
    pub tau: Vec<f64>,
    /// (G−1) × D.
    pub lambda: Vec<f64>,
    /// G − 1 intercepts.
    pub gamma: Vec<f64>,
    /// (G−1) × (G−1).
    pub sigma: Vec<f64>,
    /// G × W word distributions, softmax over w of m + κ_g.
    pub beta: Vec<f64>,
    pub posts: Vec<Posterior>,
}

impl GstmState {
    /// Parameters at their neutral values (λ = 0, γ = 0, Σ = I, τ = 1) around
    /// the given m and κ.
    pub fn new(groups: usize, dim: usize, users: usize, m: Vec<f64>, kappa: Vec<f64>) -> Self {
        let w = m.len();
        let k = groups - 1;
        let mut sigma = vec![0.0; k * k];
        for i in 0..k {
            sigma[i * k + i] = 1.0;
        }
        let posts = (0..users)
            .map(|_| Posterior::new(vec![0.0; k], sigma.clone()))
            .collect();
        let mut s = GstmState {
            groups,
            vocab_size: w,
            dim,
            m,
            kappa,
            tau: vec![1.0; groups * w],
            lambda: vec![0.0; k * dim],
            gamma: vec![0.0; k],
            sigma,
            beta: Vec::new(),
            posts,
        };
        s.refresh_beta();
        s
    }

    pub fn free(&self) -> usize {
        self.groups - 1
    }

    /// Recompute β from m and κ.
    pub fn refresh_beta(&mut self) {
        let w = self.vocab_size;
        self.beta = vec![0.0; self.groups * w];
        for g in 0..self.groups {
            let row = &mut self.beta[g * w..(g + 1) * w];
            for j in 0..w {
                row[j] = self.m[j] + self.kappa[g * w + j];
            }
            softmax_in_place(row);
        }
    }

    /// Prior mean μ_u over the free coordinates.
    pub fn mu(&self, x_u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.free())
            .map(|k| {
                self.gamma[k]
                    + x_u
                        .iter()
                        .zip(&self.lambda[k * d..(k + 1) * d])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    /// U × G plug-in proportions.
    pub fn theta(&self) -> Vec<f64> {
        self.posts.iter().flat_map(|p| p.theta()).collect()
    }

    /// Fraction of κ entries with |κ| < 1e-8.
    pub fn kappa_zero_fraction(&self) -> f64 {
        self.kappa.iter().filter(|v| v.abs() < 1e-8).count() as f64 / self.kappa.len().max(1) as f64
    }
}
