use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::estep::{e_step, UserData};
use super::init::{init, InitOutcome};
use super::mstep::{
    content_log_prior, m_step_content, m_step_prevalence, prevalence_log_prior, residual_covariance,
};
use super::state::GstmState;
use super::GstmHyper;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstmReport {
    pub init: InitOutcome,
    /// Σ_u bound + log p(λ) + log p(κ, τ) after each E-step. One entry per
    /// EM iteration plus the final E-step.
    pub objective: Vec<f64>,
    /// Σ_u bound alone, aligned with `objective`.
    pub bound: Vec<f64>,
    pub estep_fallbacks: Vec<usize>,
    pub kappa_zero_fraction: Vec<f64>,
    /// Decreases larger than 1e-6 relative.
    pub violations: usize,
    /// Completed EM iterations (M-steps).
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

impl GstmReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,objective,bound,estep_fallbacks,kappa_zero_fraction\n");
        for i in 0..self.objective.len() {
            out.push_str(&format!(
                "{i},{:.17e},{:.17e},{},{:.6}\n",
                self.objective[i],
                self.bound[i],
                self.estep_fallbacks[i],
                self.kappa_zero_fraction[i]
            ));
        }
        out
    }

    /// Relative change between the last two objective values.
    pub fn final_relative_change(&self) -> Option<f64> {
        let n = self.objective.len();
        (n >= 2).then(|| relative_change(self.objective[n - 2], self.objective[n - 1]))
    }
}

fn relative_change(prev: f64, now: f64) -> f64 {
    (now - prev).abs() / prev.abs().max(1e-300)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GstmFit {
    pub state: GstmState,
    pub report: GstmReport,
}

/// Variational EM: init, then alternate E-step, prevalence M-step and content
/// M-step until the relative objective change drops below `elbo_tol` or
/// `max_em_iters` M-steps have run. A final E-step leaves the posteriors
/// consistent with the returned parameters.
pub fn fit(corpus: &Corpus, x: &CovariateMatrix, hyper: &GstmHyper) -> Result<GstmFit> {
    hyper.validate()?;
    if x.rows != corpus.num_users() {
        return Err(Error::Dimension {
            what: "covariate rows vs users",
            expected: corpus.num_users(),
            got: x.rows,
        });
    }
    let t0 = Instant::now();
    let (mut state, outcome) = init(corpus, x.cols, hyper)?;
    let data = UserData::from_corpus(corpus);
    let mut report = GstmReport {
        init: outcome,
        objective: Vec::new(),
        bound: Vec::new(),
        estep_fallbacks: Vec::new(),
        kappa_zero_fraction: Vec::new(),
        violations: 0,
        iterations: 0,
        converged: false,
        seconds: 0.0,
    };
    loop {
        let es = e_step(&state, &data, x, hyper)?;
        let bound = es.total();
        state.posts = es.posts;
        let obj = bound
            + prevalence_log_prior(&state.lambda, hyper.sigma)
            + content_log_prior(&state, hyper);
        if let Some(&prev) = report.objective.last() {
            if obj < prev - 1e-6 * prev.abs() {
                report.violations += 1;
                log::warn!("EM objective decreased: {prev:.10e} -> {obj:.10e}");
            }
            if relative_change(prev, obj) < hyper.elbo_tol {
                report.converged = true;
            }
        }
        report.objective.push(obj);
        report.bound.push(bound);
        report.estep_fallbacks.push(es.fallbacks);
        report.kappa_zero_fraction.push(state.kappa_zero_fraction());
        log::debug!("gSTM step {}: objective {obj:.6e}", report.iterations);
        if report.converged || report.iterations == hyper.max_em_iters {
            break;
        }
        if hyper.freeze_prevalence {
            state.sigma = residual_covariance(
                &state.posts,
                x,
                &state.lambda,
                &state.gamma,
                hyper.sigma_floor,
            );
        } else {
            let (lambda, gamma, sigma) = m_step_prevalence(
                &state.posts,
                x,
                &state.sigma,
                hyper.sigma,
                hyper.sigma_floor,
            )?;
            state.lambda = lambda;
            state.gamma = gamma;
            state.sigma = sigma;
        }
        m_step_content(&mut state, &es.expected, hyper);
        report.iterations += 1;
    }
    report.seconds = t0.elapsed().as_secs_f64();
    Ok(GstmFit { state, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_gstm, SynthConfig};
    use crate::gstm::{ContentPrior, InitScheme};

    fn small() -> crate::corpus::Synthetic {
        synth_gstm(&SynthConfig {
            users: 60,
            vocab: 30,
            groups: 3,
            emb_dim: 2,
            doc_len: 30,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn objective_is_monotone_and_bounded_by_max_iters() {
        let s = small();
        for init in [InitScheme::Spectral, InitScheme::Random] {
            let hyper = GstmHyper {
                groups: 3,
                max_em_iters: 15,
                elbo_tol: 0.0,
                init,
                ..Default::default()
            };
            let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
            assert_eq!(f.report.iterations, 15);
            assert_eq!(f.report.objective.len(), 16);
            assert_eq!(f.report.violations, 0, "{:?}", f.report.objective);
            for r in f.state.beta.chunks(30) {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(f.state.tau.iter().all(|&t| t >= hyper.tau_min));
        }
    }

    #[test]
    fn default_schedule_caps_at_75_iterations() {
        let s = small();
        let hyper = GstmHyper {
            groups: 3,
            elbo_tol: 0.0,
            ..Default::default()
        };
        let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        assert_eq!(f.report.iterations, 75);
        assert!(!f.report.converged);
    }

    #[test]
    fn laplace_is_sparser_than_gaussian() {
        let s = small();
        let run = |p| {
            let hyper = GstmHyper {
                groups: 3,
                max_em_iters: 20,
                content_prior: p,
                ..Default::default()
            };
            fit(&s.corpus, &s.covariates, &hyper)
                .unwrap()
                .state
                .kappa_zero_fraction()
        };
        let (l, g) = (run(ContentPrior::Laplace), run(ContentPrior::Gaussian));
        assert!(l > g, "{l} vs {g}");
    }

    #[test]
    fn bit_reproducible() {
        let s = small();
        let hyper = GstmHyper {
            groups: 3,
            max_em_iters: 5,
            ..Default::default()
        };
        let a = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        let b = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.report.objective, b.report.objective);
    }

    #[test]
    fn frozen_prevalence_keeps_regression_at_zero() {
        let s = small();
        let hyper = GstmHyper {
            groups: 3,
            max_em_iters: 10,
            freeze_prevalence: true,
            ..Default::default()
        };
        let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        assert!(f
            .state
            .lambda
            .iter()
            .chain(&f.state.gamma)
            .all(|&v| v == 0.0));
        assert_eq!(f.report.violations, 0);
    }
}
