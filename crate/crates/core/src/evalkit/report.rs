use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ais::{ais_heldout, AisConfig, AisResult};
use super::coherence::Coherence;
use super::similarity::{SimilarityReport, SIMILARITY_CSV_HEADER};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gdmr::GdmrModel;
use crate::netembed::CovariateMatrix;
use crate::util::binio;

/// Held-out score of one model on its own scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    /// "ais" (log-likelihood) or "elbo" (variational bound).
    pub scale: String,
    pub total: f64,
    pub per_token: f64,
    pub stderr: Option<f64>,
    pub tokens: usize,
    pub excluded_users: usize,
    pub oov_tokens: usize,
    pub oov_rate: f64,
    /// Per-user estimates, in held-out user order (excluded users omitted).
    pub per_user: Vec<f64>,
}

/// AIS held-out log-likelihood of a gDMR model. Held-out α comes from each
/// user's covariates through the fitted regression; OOV tokens are dropped.
pub fn heldout_gdmr(
    model: &GdmrModel,
    heldout: &Corpus,
    vocab: &[String],
    x: &CovariateMatrix,
    cfg: &AisConfig,
) -> Result<(HeldOut, AisResult)> {
    model.check_columns(x)?;
    if x.rows != heldout.num_users() {
        return Err(Error::Dimension {
            what: "held-out covariate rows",
            expected: heldout.num_users(),
            got: x.rows,
        });
    }
    if vocab.len() != model.vocab_size {
        return Err(Error::Dimension {
            what: "model vocabulary",
            expected: model.vocab_size,
            got: vocab.len(),
        });
    }
    let (docs, dropped) = heldout.map_to_vocab(vocab);
    let g = model.groups();
    let alphas: Vec<f64> = (0..heldout.num_users())
        .flat_map(|u| model.alpha(x.row(u)))
        .collect();
    let r = ais_heldout(&model.phi, g, model.vocab_size, &alphas, &docs, cfg)?;
    let raw = heldout.total_tokens();
    Ok((
        HeldOut {
            scale: "ais".into(),
            total: r.total,
            per_token: r.per_token,
            stderr: Some(r.stderr),
            tokens: r.tokens,
            excluded_users: r.excluded_users,
            oov_tokens: dropped,
            oov_rate: if raw > 0 {
                dropped as f64 / raw as f64
            } else {
                0.0
            },
            per_user: r.users.iter().map(|e| e.log_likelihood).collect(),
        },
        r,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub held_out: Option<HeldOut>,
    pub coherence: Coherence,
    pub similarity: Option<SimilarityReport>,
    pub baseline: Option<SimilarityReport>,
}

impl EvalReport {
    /// Writes `eval.json` and, when groups were scored, `similarities.csv`.
    pub fn write(&self, dir: &Path, users: &[String]) -> Result<()> {
        binio::ensure_dir(dir)?;
        binio::write_json(&dir.join("eval.json"), self)?;
        if self.similarity.is_some() || self.baseline.is_some() {
            let mut csv = String::from(SIMILARITY_CSV_HEADER);
            if let Some(s) = &self.similarity {
                csv.push_str(&s.to_csv("model", users));
            }
            if let Some(s) = &self.baseline {
                csv.push_str(&s.to_csv("random", users));
            }
            binio::write_text(&dir.join("similarities.csv"), &csv)?;
        }
        Ok(())
    }
}
