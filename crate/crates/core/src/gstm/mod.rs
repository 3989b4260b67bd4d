//! gSTM: logistic-normal prevalence regressed on covariates, with sparse
//! group-specific word deviations κ over a shared baseline m, fit by
//! variational EM.
//!
//! Prevalence lives in G − 1 free coordinates; the last group is the
//! reference with η_G ≡ 0. So `lambda` is (G−1) × D, `gamma` has G − 1
//! entries and `sigma` is (G−1) × (G−1).

mod archive;
mod estep;
mod fit;
mod frex;
mod init;
mod mstep;
mod state;

use serde::{Deserialize, Serialize};

pub use archive::GstmModel;
pub use estep::{e_step, quadrature_log_marginal, user_bound, user_posterior, EStep, UserData};
pub use fit::{fit, GstmFit, GstmReport};
pub use frex::{frex, FrexEntry, FrexTable};
pub use init::{init, spectral_topics, InitOutcome};
pub use mstep::{
    m_step_content, m_step_prevalence, residual_covariance, tau_update, weighted_median,
    ContentStats,
};
pub use state::{GstmState, Posterior};

use crate::error::{Error, Result};
use crate::optim::LbfgsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    #[default]
    Spectral,
    Lda,
    Random,
}

/// Prior on the content deviations κ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentPrior {
    /// Laplace(0, τ) with a Gamma(1, 1) hyperprior on τ.
    #[default]
    Laplace,
    /// Normal(0, s²) with fixed s: the non-sparse ablation.
    Gaussian,
}

/// Shape of the per-user variational covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GstmHyper {
    pub groups: usize,
    pub max_em_iters: usize,
    pub init: InitScheme,
    /// Prior standard deviation of λ.
    pub sigma: f64,
    /// Relative objective change that stops EM.
    pub elbo_tol: f64,
    pub frex_omega: f64,
    pub content_prior: ContentPrior,
    /// Standard deviation of the Gaussian ablation prior.
    pub gaussian_scale: f64,
    pub tau_min: f64,
    /// Coordinate-ascent sweeps over κ per M-step.
    pub content_sweeps: usize,
    pub covariance: Covariance,
    /// Smallest eigenvalue kept in Σ.
    pub sigma_floor: f64,
    /// Collapsed Gibbs sweeps used by the LDA initializer.
    pub lda_sweeps: usize,
    /// Largest vocabulary for which spectral init is attempted.
    pub spectral_max_vocab: usize,
    /// Keep λ and γ at 0 and fit only Σ: the covariate-free baseline.
    pub freeze_prevalence: bool,
    pub estep: LbfgsConfig,
    pub seed: u64,
}

impl Default for GstmHyper {
    fn default() -> Self {
        GstmHyper {
            groups: 20,
            max_em_iters: 75,
            init: InitScheme::Spectral,
            sigma: 1.0,
            elbo_tol: 1e-5,
            frex_omega: 0.7,
            content_prior: ContentPrior::Laplace,
            gaussian_scale: 1.0,
            tau_min: 1e-4,
            content_sweeps: 3,
            covariance: Covariance::Diagonal,
            sigma_floor: 1e-6,
            lda_sweeps: 50,
            spectral_max_vocab: 4000,
            freeze_prevalence: false,
            estep: LbfgsConfig {
                max_iter: 50,
                grad_tol: 1e-6,
                f_tol: 1e-12,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

impl GstmHyper {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::Config("gSTM needs at least 2 groups".into()));
        }
        if self.max_em_iters == 0 {
            return Err(Error::Config("max_em_iters must be at least 1".into()));
        }
        if !(self.frex_omega > 0.0 && self.frex_omega < 1.0) {
            return Err(Error::Config("frex_omega must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("gaussian_scale", self.gaussian_scale),
            ("tau_min", self.tau_min),
            ("sigma_floor", self.sigma_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.elbo_tol >= 0.0) {
            return Err(Error::Config("elbo_tol must be non-negative".into()));
        }
        Ok(())
    }

    /// Free prevalence coordinates.
    pub fn free(&self) -> usize {
        self.groups - 1
    }
}
