use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::{FitReport, GdmrFit};
use super::state::alpha_into;
use super::GdmrHyper;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;
use crate::util::binio;

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to score or group with a fitted gDMR model.
#[derive(Debug, Clone, PartialEq)]
pub struct GdmrModel {
    pub hyper: GdmrHyper,
    pub vocab_size: usize,
    pub vocab_hash: String,
    /// Training users, in the row order of `theta`.
    pub users: Vec<String>,
    /// Covariate column names, in the column order of `lambda`.
    pub columns: Vec<String>,
    /// G × D.
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// G × W.
    pub phi: Vec<f64>,
    /// U × G.
    pub theta: Vec<f64>,
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
    hyper: GdmrHyper,
}

impl GdmrModel {
    pub fn from_fit(
        fit: &GdmrFit,
        corpus: &Corpus,
        x: &CovariateMatrix,
        hyper: &GdmrHyper,
    ) -> Self {
        GdmrModel {
            hyper: hyper.clone(),
            vocab_size: corpus.vocab_size(),
            vocab_hash: corpus.vocab_hash(),
            users: corpus.users.clone(),
            columns: x.columns.clone(),
            lambda: fit.state.lambda.clone(),
            gamma: fit.state.gamma.clone(),
            phi: fit.phi.clone(),
            theta: fit.theta.clone(),
        }
    }

    pub fn groups(&self) -> usize {
        self.hyper.groups
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// α for an arbitrary covariate row (e.g. a held-out user).
    pub fn alpha(&self, x_u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.groups()];
        alpha_into(x_u, &self.lambda, &self.gamma, &mut out);
        out
    }

    /// Refuse a corpus with a different vocabulary.
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

    /// Refuse covariates whose columns differ from the training columns.
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

    pub fn write(&self, dir: &Path, report: Option<&FitReport>) -> Result<()> {
        binio::ensure_dir(dir)?;
        binio::write_f64(&dir.join("lambda.f64"), &self.lambda)?;
        binio::write_f64(&dir.join("gamma.f64"), &self.gamma)?;
        binio::write_f64(&dir.join("phi.f64"), &self.phi)?;
        binio::write_f64(&dir.join("theta.f64"), &self.theta)?;
        binio::write_json(
            &dir.join("model.json"),
            &Sidecar {
                format_version: FORMAT_VERSION,
                kind: "gdmr".into(),
                groups: self.groups(),
                vocab_size: self.vocab_size,
                dim: self.dim(),
                users: self.users.clone(),
                columns: self.columns.clone(),
                vocab_hash: self.vocab_hash.clone(),
                hyper: self.hyper.clone(),
            },
        )?;
        if let Some(r) = report {
            binio::write_text(&dir.join("trace.csv"), &r.trace_csv())?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let s: Sidecar = binio::read_json(&path)?;
        if s.kind != "gdmr" {
            return Err(Error::archive(
                path,
                format!("expected a gdmr model, found {}", s.kind),
            ));
        }
        if s.format_version != FORMAT_VERSION {
            return Err(Error::archive(
                path,
                format!("unsupported format version {}", s.format_version),
            ));
        }
        let (g, w, d, u) = (s.groups, s.vocab_size, s.dim, s.users.len());
        Ok(GdmrModel {
            lambda: binio::read_f64(&dir.join("lambda.f64"), g * d)?,
            gamma: binio::read_f64(&dir.join("gamma.f64"), g)?,
            phi: binio::read_f64(&dir.join("phi.f64"), g * w)?,
            theta: binio::read_f64(&dir.join("theta.f64"), u * g)?,
            hyper: s.hyper,
            vocab_size: w,
            vocab_hash: s.vocab_hash,
            users: s.users,
            columns: s.columns,
        })
    }
}
