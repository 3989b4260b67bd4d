//! Stage building blocks shared by `run` and the individual CLI commands.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelKind;
use crate::corpus::{Corpus, Post};
use crate::error::{Error, Result};
use crate::evalkit::{heldout_gdmr, umass, AisConfig, Coherence, HeldOut};
use crate::gdmr::{self, FitReport, GdmrHyper, GdmrModel, PriorMode};
use crate::gstm::{self, GstmHyper, GstmModel, GstmReport};
use crate::netembed::{
    build_graph, covariates, node2vec, write_graph, CovariateMatrix, EmbedReport, EmbeddingMatrix,
    EncodingConfig, GraphReport, InteractionGraph, Node2VecConfig,
};
use crate::util::binio;

/// Version of each stage's output format, recorded in manifests.
pub const STAGE_VERSIONS: [(&str, u32); 7] = [
    ("data", 1),
    ("graph", 1),
    ("embed", 1),
    ("covariates", 1),
    ("fit", 1),
    ("groups", 1),
    ("eval", 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_versions: BTreeMap<String, u32>,
    pub crate_version: String,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str, seed: u64) -> Self {
        Manifest {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            stage_versions: STAGE_VERSIONS
                .iter()
                .map(|&(s, v)| (s.to_string(), v))
                .collect(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        binio::write_json(&dir.join("manifest.json"), self)
    }
}

/// Keep only reply records, without bodies, as `interactions.jsonl`.
pub fn write_interactions(path: &Path, posts: &[Post]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for p in posts.iter().filter(|p| p.reply_to_author_id.is_some()) {
        let slim = Post {
            body: String::new(),
            ..p.clone()
        };
        serde_json::to_writer(&mut w, &slim)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_interactions(path: &Path) -> Result<Vec<Post>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::archive(path, format!("line {}: {e}", i + 1)))?,
            );
        }
    }
    Ok(out)
}

pub struct Embedded {
    pub graph: InteractionGraph,
    pub graph_report: GraphReport,
    pub embedding: Option<(EmbeddingMatrix, EmbedReport)>,
    pub covariates: CovariateMatrix,
}

/// Reply graph, node2vec embeddings (when enabled) and the covariate matrix.
pub fn embed(
    corpus: &Corpus,
    posts: &[Post],
    n2v: &Node2VecConfig,
    enc: &EncodingConfig,
) -> Result<Embedded> {
    let (graph, graph_report) = build_graph(posts, &corpus.users);
    let embedding = if enc.embedding {
        Some(node2vec(&graph, n2v)?)
    } else {
        None
    };
    let x = covariates(&corpus.profiles, embedding.as_ref().map(|e| &e.0), enc)?;
    Ok(Embedded {
        graph,
        graph_report,
        embedding,
        covariates: x,
    })
}

impl Embedded {
    /// `graph.tsv`, `edges.jsonl`, `emb.f32`, `embed_report.json` and the
    /// covariate archive, all in `dir`.
    pub fn write(&self, dir: &Path, users: &[String]) -> Result<()> {
        write_graph(dir, &self.graph, users)?;
        if let Some((e, r)) = &self.embedding {
            e.write(&dir.join("emb.f32"))?;
            binio::write_json(&dir.join("embed_report.json"), r)?;
        }
        binio::write_json(&dir.join("graph_report.json"), &self.graph_report)?;
        self.covariates.write(dir)
    }
}

/// Covariates a model kind sees.
pub fn covariates_for(kind: ModelKind, x: &CovariateMatrix) -> CovariateMatrix {
    if kind.uses_embedding() {
        x.clone()
    } else {
        x.without_embedding()
    }
}

pub fn gdmr_hyper_for(kind: ModelKind, base: &GdmrHyper) -> GdmrHyper {
    let mut h = base.clone();
    h.mode = match kind {
        ModelKind::Lda => PriorMode::Lda,
        ModelKind::Dmr => PriorMode::Dmr,
        _ => PriorMode::Gdmr,
    };
    h
}

pub fn gstm_hyper_for(kind: ModelKind, base: &GstmHyper) -> GstmHyper {
    let mut h = base.clone();
    h.freeze_prevalence = kind == ModelKind::Stm;
    h
}

/// A fitted model of either engine.
#[derive(Debug, Clone)]
pub enum Fitted {
    Gdmr(Box<GdmrModel>, Option<FitReport>),
    Gstm(Box<GstmModel>, Option<GstmReport>),
}

impl Fitted {
    pub fn fit(
        kind: ModelKind,
        train: &Corpus,
        x: &CovariateMatrix,
        gdmr_base: &GdmrHyper,
        gstm_base: &GstmHyper,
    ) -> Result<Self> {
        let x = covariates_for(kind, x);
        if kind.is_gstm() {
            let h = gstm_hyper_for(kind, gstm_base);
            let f = gstm::fit(train, &x, &h)?;
            Ok(Fitted::Gstm(
                Box::new(GstmModel::from_fit(&f, train, &x, &h)),
                Some(f.report),
            ))
        } else {
            let h = gdmr_hyper_for(kind, gdmr_base);
            let f = gdmr::fit(train, &x, &h)?;
            Ok(Fitted::Gdmr(
                Box::new(GdmrModel::from_fit(&f, train, &x, &h)),
                Some(f.report),
            ))
        }
    }

    /// Read an archive directory of either kind.
    pub fn read(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Kind {
            kind: String,
        }
        let path = dir.join("model.json");
        let k: Kind = binio::read_json(&path)?;
        match k.kind.as_str() {
            "gdmr" => Ok(Fitted::Gdmr(Box::new(GdmrModel::read(dir)?), None)),
            "gstm" => Ok(Fitted::Gstm(Box::new(GstmModel::read(dir)?), None)),
            other => Err(Error::archive(path, format!("unknown model kind {other}"))),
        }
    }

    pub fn write(&self, dir: &Path, vocab: &[String]) -> Result<()> {
        match self {
            Fitted::Gdmr(m, r) => m.write(dir, r.as_ref()),
            Fitted::Gstm(m, r) => m.write(dir, r.as_ref(), vocab),
        }
    }

    pub fn groups(&self) -> usize {
        match self {
            Fitted::Gdmr(m, _) => m.groups(),
            Fitted::Gstm(m, _) => m.groups(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Fitted::Gdmr(m, _) => m.vocab_size,
            Fitted::Gstm(m, _) => m.vocab_size,
        }
    }

    pub fn users(&self) -> &[String] {
        match self {
            Fitted::Gdmr(m, _) => &m.users,
            Fitted::Gstm(m, _) => &m.users,
        }
    }

    pub fn columns(&self) -> &[String] {
        match self {
            Fitted::Gdmr(m, _) => &m.columns,
            Fitted::Gstm(m, _) => &m.columns,
        }
    }

    /// G × W word distributions.
    pub fn phi(&self) -> &[f64] {
        match self {
            Fitted::Gdmr(m, _) => &m.phi,
            Fitted::Gstm(m, _) => &m.beta,
        }
    }

    /// U × G training-user proportions.
    pub fn theta(&self) -> &[f64] {
        match self {
            Fitted::Gdmr(m, _) => &m.theta,
            Fitted::Gstm(m, _) => &m.theta,
        }
    }

    pub fn check_vocab(&self, corpus: &Corpus) -> Result<()> {
        match self {
            Fitted::Gdmr(m, _) => m.check_vocab(corpus),
            Fitted::Gstm(m, _) => m.check_vocab(corpus),
        }
    }

    /// Select the model's covariate columns from `x`, by name.
    pub fn align_columns(&self, x: &CovariateMatrix) -> Result<CovariateMatrix> {
        let cols = self.columns();
        let pos: Vec<usize> = cols
            .iter()
            .map(|c| {
                x.columns.iter().position(|k| k == c).ok_or_else(|| {
                    Error::InvalidInput(format!("covariate column `{c}` is missing"))
                })
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(x.rows * pos.len());
        for u in 0..x.rows {
            let r = x.row(u);
            data.extend(pos.iter().map(|&j| r[j]));
        }
        CovariateMatrix::new(x.rows, cols.to_vec(), data)
    }

    /// Held-out score: AIS log-likelihood for gDMR, ELBO for gSTM.
    pub fn heldout(
        &self,
        test: &Corpus,
        vocab: &[String],
        x_test: &CovariateMatrix,
        ais: &AisConfig,
    ) -> Result<HeldOut> {
        let x = self.align_columns(x_test)?;
        match self {
            Fitted::Gdmr(m, _) => Ok(heldout_gdmr(m, test, vocab, &x, ais)?.0),
            Fitted::Gstm(m, _) => m.heldout(test, vocab, &x),
        }
    }

    pub fn coherence(&self, train: &Corpus, top_m: usize) -> Result<Coherence> {
        umass(
            self.phi(),
            self.groups(),
            self.vocab_size(),
            &train.tokens,
            top_m,
        )
    }
}
