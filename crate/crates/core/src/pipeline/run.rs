//! End-to-end run: data → graph/embeddings → covariates → split → fits →
//! groups → evaluation, with a manifest in every artifact directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ModelKind, RunConfig, Source};
use super::split::split;
use super::stages::{embed, write_interactions, Fitted, Manifest};
use crate::corpus::{ingest_jsonl, synth_community, tfidf, write_corpus, Corpus, Post};
use crate::error::{Error, Result};
use crate::evalkit::{random_baseline, within_group_similarity, EvalReport};
use crate::grouper::{form_groups, forum_analysis, forum_report_csv, stratified_sample};
use crate::netembed::TrainMode;
use crate::util::binio;

/// A failed stage and its cause.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {error}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub error: Error,
}

impl StageError {
    pub fn is_config(&self) -> bool {
        self.error.is_config()
    }
}

/// Machine-readable failure record written as `error.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub slug: String,
    pub heldout_scale: String,
    pub heldout_per_token: f64,
    pub heldout_total: f64,
    pub heldout_stderr: Option<f64>,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out: PathBuf,
    pub comparison: Vec<ComparisonRow>,
    pub groups: usize,
    /// Median of per-group medians, model groups minus random groups.
    pub similarity_gap: Option<f64>,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from(
        "model,heldout_scale,heldout_per_token,heldout_total,heldout_stderr,coherence\n",
    );
    for r in rows {
        s.push_str(&format!(
            "\"{}\",{},{:.6},{:.6},{},{:.6}\n",
            r.model,
            r.heldout_scale,
            r.heldout_per_token,
            r.heldout_total,
            r.heldout_stderr
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            r.coherence
        ));
    }
    s
}

struct Ctx<'a> {
    out: &'a Path,
    hash: String,
    seed: u64,
    timings: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn stage<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&Self) -> Result<T>,
    ) -> std::result::Result<T, StageError> {
        let t = Instant::now();
        log::info!("stage {name}");
        let r = f(self).map_err(|error| StageError { stage: name, error });
        self.timings
            .insert(name.to_string(), t.elapsed().as_secs_f64());
        r
    }

    fn manifest(&self, stage: &str, dir: &Path) -> Result<()> {
        Manifest::new(stage, &self.hash, self.seed).write(dir)
    }
}

fn write_error(out: &Path, e: &StageError) {
    let rec = ErrorRecord {
        stage: e.stage.to_string(),
        kind: if e.is_config() { "config" } else { "stage" }.to_string(),
        message: e.error.to_string(),
    };
    if binio::ensure_dir(out).is_ok() {
        let _ = binio::write_json(&out.join("error.json"), &rec);
    }
}

/// Apply the global seed and determinism switch to every stage config.
pub fn resolve(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.synth.seed = c.seed;
    c.embed.seed = c.seed;
    c.gdmr.seed = c.seed;
    c.gstm.seed = c.seed;
    c.eval.ais.seed = c.seed;
    if c.deterministic {
        c.embed.mode = TrainMode::Deterministic;
    }
    c
}

fn load_data(cfg: &RunConfig) -> Result<(Corpus, Vec<Post>, serde_json::Value)> {
    match cfg.data.source {
        Source::Synth => {
            let s = synth_community(&cfg.synth)?;
            let report = serde_json::json!({ "source": "synth", "users": s.corpus.num_users() });
            Ok((s.corpus, s.replies, report))
        }
        Source::Jsonl => {
            let open = |p: &Option<PathBuf>| -> Result<BufReader<File>> {
                let p = p.as_ref().expect("validated");
                Ok(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?))
            };
            let ing = ingest_jsonl(
                open(&cfg.data.posts)?,
                open(&cfg.data.profiles)?,
                &cfg.preprocess,
            )?;
            let report = serde_json::to_value(&ing.report)?;
            Ok((ing.corpus, ing.posts, report))
        }
    }
}

/// Execute the whole DAG into `cfg.out`. On failure `error.json` is written
/// to the output directory and the failing stage is returned.
pub fn run(cfg: &RunConfig) -> std::result::Result<RunSummary, StageError> {
    let out = cfg.out.clone();
    let r = run_inner(cfg, &out);
    if let Err(e) = &r {
        write_error(&out, e);
    }
    r
}

fn run_inner(cfg: &RunConfig, out: &Path) -> std::result::Result<RunSummary, StageError> {
    cfg.validate().map_err(|error| StageError {
        stage: "config",
        error,
    })?;
    let cfg = resolve(cfg);
    let mut ctx = Ctx {
        out,
        hash: cfg.hash(),
        seed: cfg.seed,
        timings: BTreeMap::new(),
    };
    ctx.stage("config", |c| {
        binio::ensure_dir(c.out)?;
        let _ = std::fs::remove_file(c.out.join("error.json"));
        binio::write_json(&c.out.join("config.json"), &cfg)?;
        c.manifest("run", c.out)
    })?;

    let corpus = ctx.stage("data", |c| {
        let (corpus, posts, report) = load_data(&cfg)?;
        let dir = c.out.join("corpus");
        write_corpus(&dir, &corpus)?;
        write_interactions(&dir.join("interactions.jsonl"), &posts)?;
        binio::write_json(&dir.join("ingest_report.json"), &report)?;
        c.manifest("data", &dir)?;
        Ok((corpus, posts))
    })?;
    let (corpus, posts) = corpus;

    let x = ctx.stage("embed", |c| {
        let e = embed(&corpus, &posts, &cfg.embed, &cfg.encoding)?;
        let dir = c.out.join("embed");
        e.write(&dir, &corpus.users)?;
        c.manifest("embed", &dir)?;
        Ok(e.covariates)
    })?;

    let (train, test, x_train, x_test) = ctx.stage("split", |c| {
        let (train, test, s) = split(&corpus, cfg.split_frac, cfg.seed)?;
        let ids = |v: &[usize]| {
            v.iter()
                .map(|&u| corpus.users[u].clone())
                .collect::<Vec<_>>()
        };
        binio::write_json(
            &c.out.join("split.json"),
            &serde_json::json!({ "train": ids(&s.train), "test": ids(&s.test) }),
        )?;
        Ok((train, test, x.subset_rows(&s.train), x.subset_rows(&s.test)))
    })?;

    for &kind in &cfg.models {
        ctx.stage("fit", |c| {
            log::info!("fitting {}", kind.label());
            let m = Fitted::fit(kind, &train, &x_train, &cfg.gdmr, &cfg.gstm)?;
            let dir = c.out.join("models").join(kind.slug());
            m.write(&dir, &train.vocab)?;
            c.manifest("fit", &dir)
        })?;
    }

    let vectors = tfidf(&train);
    let groups = ctx.stage("groups", |c| {
        let m = Fitted::read(&c.out.join("models").join(cfg.groups.model.slug()))?;
        m.check_vocab(&train)?;
        let set = form_groups(
            m.theta(),
            m.groups(),
            &vectors,
            &x_train,
            &cfg.groups.assign,
            cfg.seed,
        )?;
        let dir = c.out.join("groups");
        binio::ensure_dir(&dir)?;
        set.write_jsonl(&dir.join("groups.jsonl"), &train.users)?;
        let rows = forum_analysis(&train.profiles, &set.groups, &vectors);
        binio::write_text(&dir.join("forum_report.csv"), &forum_report_csv(&rows))?;
        let mut samples = String::new();
        for g in &set.groups {
            let s = stratified_sample(&g.members, &train.profiles, cfg.groups.sample_k, cfg.seed);
            let ids: Vec<&str> = s.iter().map(|&u| train.users[u].as_str()).collect();
            samples.push_str(&serde_json::to_string(
                &serde_json::json!({ "group_id": g.group_id, "sample": ids }),
            )?);
            samples.push('\n');
        }
        binio::write_text(&dir.join("samples.jsonl"), &samples)?;
        binio::write_json(&dir.join("unassigned.json"), &set.unassigned)?;
        c.manifest("groups", &dir)?;
        Ok(set)
    })?;

    let mut comparison = Vec::new();
    let mut similarity_gap = None;
    for &kind in &cfg.models {
        let row = ctx.stage("eval", |c| {
            let m = Fitted::read(&c.out.join("models").join(kind.slug()))?;
            m.check_vocab(&train)?;
            let held = m.heldout(&test, &train.vocab, &x_test, &cfg.eval.ais)?;
            let coherence = m.coherence(&train, cfg.eval.top_m)?;
            let (similarity, baseline) = if kind == cfg.groups.model {
                let labelled = groups.labelled();
                (
                    Some(within_group_similarity(&labelled, &vectors)?),
                    Some(random_baseline(&labelled, &vectors, cfg.seed)?),
                )
            } else {
                (None, None)
            };
            if let (Some(s), Some(b)) = (&similarity, &baseline) {
                if let (Some(a), Some(r)) = (s.summary, b.summary) {
                    similarity_gap = Some(a.median - r.median);
                }
            }
            let row = ComparisonRow {
                model: kind.label().to_string(),
                slug: kind.slug().to_string(),
                heldout_scale: held.scale.clone(),
                heldout_per_token: held.per_token,
                heldout_total: held.total,
                heldout_stderr: held.stderr,
                coherence: coherence.mean,
            };
            let report = EvalReport {
                model: kind.label().to_string(),
                held_out: Some(held),
                coherence,
                similarity,
                baseline,
            };
            let dir = c.out.join("eval").join(kind.slug());
            report.write(&dir, &train.users)?;
            c.manifest("eval", &dir)?;
            Ok(row)
        })?;
        comparison.push(row);
    }

    ctx.stage("report", |c| {
        binio::write_text(&c.out.join("comparison.csv"), &comparison_csv(&comparison))?;
        binio::write_json(&c.out.join("comparison.json"), &comparison)
    })?;
    let _ = binio::write_json(&out.join("timings.json"), &ctx.timings);
    Ok(RunSummary {
        out: out.to_path_buf(),
        comparison,
        groups: groups.groups.len(),
        similarity_gap,
    })
}

/// Labels of the selected models, in table order.
pub fn table_rows(models: &[ModelKind]) -> Vec<&'static str> {
    ModelKind::ALL
        .iter()
        .filter(|k| models.contains(k))
        .map(|k| k.label())
        .collect()
}
