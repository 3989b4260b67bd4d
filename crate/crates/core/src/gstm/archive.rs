use std::path::Path;

use serde::{Deserialize, Serialize};

use super::estep::{user_posterior, UserData};
use super::fit::{GstmFit, GstmReport};
use super::frex::{frex, FrexTable};
use super::state::Posterior;
use super::GstmHyper;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evalkit::HeldOut;
use crate::netembed::CovariateMatrix;
use crate::util::binio;

pub const FORMAT_VERSION: u32 = 1;

/// Words per group written to `frex.csv`.
pub const FREX_TOP: usize = 20;

/// Everything needed to score or group with a fitted gSTM model.
#[derive(Debug, Clone, PartialEq)]
pub struct GstmModel {
    pub hyper: GstmHyper,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub users: Vec<String>,
    pub columns: Vec<String>,
    pub m: Vec<f64>,
    /// G × W.
    pub kappa: Vec<f64>,
    pub tau: Vec<f64>,
    /// (G−1) × D.
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// (G−1) × (G−1).
    pub sigma_cov: Vec<f64>,
    /// G × W word distributions.
    pub beta: Vec<f64>,
    /// U × G plug-in proportions of the training users.
    pub theta: Vec<f64>,
    /// U × (G−1) posterior means.
    pub eta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    kind: String,
    groups: usize,
    vocab_size: usize,
    dim: usize,
    users: Vec<String>,
    columns: Vec<String>,
    vocab_hash: String,
    hyper: GstmHyper,
}

impl GstmModel {
    pub fn from_fit(
        fit: &GstmFit,
        corpus: &Corpus,
        x: &CovariateMatrix,
        hyper: &GstmHyper,
    ) -> Self {
        let s = &fit.state;
        GstmModel {
            hyper: hyper.clone(),
            vocab_size: corpus.vocab_size(),
            vocab_hash: corpus.vocab_hash(),
            users: corpus.users.clone(),
            columns: x.columns.clone(),
            m: s.m.clone(),
            kappa: s.kappa.clone(),
            tau: s.tau.clone(),
            lambda: s.lambda.clone(),
            gamma: s.gamma.clone(),
            sigma_cov: s.sigma.clone(),
            beta: s.beta.clone(),
            theta: s.theta(),
            eta: s.posts.iter().flat_map(|p| p.eta.clone()).collect(),
        }
    }

    pub fn groups(&self) -> usize {
        self.hyper.groups
    }

    pub fn free(&self) -> usize {
        self.groups() - 1
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn mu(&self, x_u: &[f64]) -> Vec<f64> {
        let d = self.dim();
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

    pub fn frex(&self) -> FrexTable {
        frex(
            &self.beta,
            self.groups(),
            self.vocab_size,
            self.hyper.frex_omega,
        )
    }

    pub fn check_vocab(&self, corpus: &Corpus) -> Result<()> {
        let h = corpus.vocab_hash();
        if h != self.vocab_hash {
            return Err(Error::VocabularyMismatch {
                model: self.vocab_hash.clone(),
                corpus: h,
            });
        }
        Ok(())
    }

    pub fn check_columns(&self, x: &CovariateMatrix) -> Result<()> {
        if x.columns != self.columns {
            return Err(Error::InvalidInput(format!(
                "covariate columns differ from the model's ({} vs {})",
                x.cols,
                self.columns.len()
            )));
        }
        Ok(())
    }

    /// Per-user variational bound on held-out users. q starts at the prior
    /// N(μ_u, Σ) and is optimized with β, λ, γ, Σ fixed. OOV tokens are
    /// dropped; users left with no tokens are excluded.
    pub fn heldout(
        &self,
        heldout: &Corpus,
        vocab: &[String],
        x: &CovariateMatrix,
    ) -> Result<HeldOut> {
        self.check_columns(x)?;
        if x.rows != heldout.num_users() || vocab.len() != self.vocab_size {
            return Err(Error::Dimension {
                what: "held-out inputs",
                expected: heldout.num_users(),
                got: x.rows,
            });
        }
        let (docs, dropped) = heldout.map_to_vocab(vocab);
        let k = self.free();
        let mut diag = vec![0.0; k * k];
        for i in 0..k {
            diag[i * k + i] = self.sigma_cov[i * k + i];
        }
        let start_cov = match self.hyper.covariance {
            super::Covariance::Diagonal => diag,
            super::Covariance::Full => self.sigma_cov.clone(),
        };
        use rayon::prelude::*;
        let scored: Vec<Option<(f64, usize)>> = docs
            .par_iter()
            .enumerate()
            .map(|(u, d)| {
                if d.is_empty() {
                    return Ok(None);
                }
                let data = UserData::from_tokens(d);
                let mu = self.mu(x.row(u));
                let start = Posterior::new(mu.clone(), start_cov.clone());
                let (_, b, _) = user_posterior(
                    &data,
                    &mu,
                    &self.sigma_cov,
                    &self.beta,
                    self.vocab_size,
                    &start,
                    self.hyper.covariance,
                    &self.hyper.estep,
                )?;
                Ok(Some((b, d.len())))
            })
            .collect::<Result<_>>()?;
        let per_user: Vec<f64> = scored.iter().flatten().map(|s| s.0).collect();
        let tokens: usize = scored.iter().flatten().map(|s| s.1).sum();
        let total: f64 = per_user.iter().sum();
        let raw = heldout.total_tokens();
        Ok(HeldOut {
            scale: "elbo".into(),
            total,
            per_token: if tokens > 0 {
                total / tokens as f64
            } else {
                f64::NAN
            },
            stderr: None,
            tokens,
            excluded_users: scored.iter().filter(|s| s.is_none()).count(),
            oov_tokens: dropped,
            oov_rate: if raw > 0 {
                dropped as f64 / raw as f64
            } else {
                0.0
            },
            per_user,
        })
    }

    pub fn write(&self, dir: &Path, report: Option<&GstmReport>, vocab: &[String]) -> Result<()> {
        binio::ensure_dir(dir)?;
        for (name, v) in [
            ("m.f64", &self.m),
            ("kappa.f64", &self.kappa),
            ("tau.f64", &self.tau),
            ("lambda.f64", &self.lambda),
            ("gamma.f64", &self.gamma),
            ("sigma_cov.f64", &self.sigma_cov),
            ("phi.f64", &self.beta),
            ("theta.f64", &self.theta),
            ("eta.f64", &self.eta),
        ] {
            binio::write_f64(&dir.join(name), v)?;
        }
        binio::write_json(
            &dir.join("model.json"),
            &Sidecar {
                format_version: FORMAT_VERSION,
                kind: "gstm".into(),
                groups: self.groups(),
                vocab_size: self.vocab_size,
                dim: self.dim(),
                users: self.users.clone(),
                columns: self.columns.clone(),
                vocab_hash: self.vocab_hash.clone(),
                hyper: self.hyper.clone(),
            },
        )?;
        if vocab.len() == self.vocab_size {
            binio::write_text(&dir.join("frex.csv"), &self.frex().to_csv(vocab, FREX_TOP))?;
        }
        if let Some(r) = report {
            binio::write_text(&dir.join("trace.csv"), &r.trace_csv())?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let s: Sidecar = binio::read_json(&path)?;
        if s.kind != "gstm" {
            return Err(Error::archive(
                path,
                format!("expected a gstm model, found {}", s.kind),
            ));
        }
        if s.format_version != FORMAT_VERSION {
            return Err(Error::archive(
                path,
                format!("unsupported format version {}", s.format_version),
            ));
        }
        let (g, w, d, u) = (s.groups, s.vocab_size, s.dim, s.users.len());
        let k = g - 1;
        let r = |name: &str, len: usize| binio::read_f64(&dir.join(name), len);
        Ok(GstmModel {
            m: r("m.f64", w)?,
            kappa: r("kappa.f64", g * w)?,
            tau: r("tau.f64", g * w)?,
            lambda: r("lambda.f64", k * d)?,
            gamma: r("gamma.f64", k)?,
            sigma_cov: r("sigma_cov.f64", k * k)?,
            beta: r("phi.f64", g * w)?,
            theta: r("theta.f64", u * g)?,
            eta: r("eta.f64", u * k)?,
            hyper: s.hyper,
            vocab_size: w,
            vocab_hash: s.vocab_hash,
            users: s.users,
            columns: s.columns,
        })
    }
}
