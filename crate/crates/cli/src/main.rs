use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cohort::corpus::{
    ingest_jsonl, read_corpus, synth_community, synth_gdmr, synth_gstm, tfidf, write_corpus,
    CommunityConfig, Corpus, PreprocessConfig, SynthConfig, UserProfile,
};
use cohort::evalkit::{random_baseline, umass, within_group_similarity, AisConfig, EvalReport};
use cohort::gdmr::{self, GdmrHyper, GdmrModel, PriorMode};
use cohort::grouper::{
    form_groups, forum_analysis, forum_report_csv, read_groups_jsonl, stratified_sample,
    AssignConfig,
};
use cohort::gstm::{self, ContentPrior, GstmHyper, GstmModel, InitScheme};
use cohort::netembed::{CovariateMatrix, EncodingConfig, Node2VecConfig, TrainMode};
use cohort::pipeline::{self, read_interactions, write_interactions, Fitted, Manifest, RunConfig};
use cohort::util::{binio, sha256_hex};

#[derive(Debug, Parser)]
#[command(
    name = "cohort",
    version,
    about = "Covariate-aware topic models and support-group formation"
)]
struct Cli {
    /// Cap the worker pool at N threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use the bit-reproducible embedding trainer.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Tokenize JSON-Lines posts and profiles into a corpus archive.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with known parameters.
    Synth(SynthArgs),
    /// Build the reply graph, train node2vec and write covariates.
    Embed(EmbedArgs),
    /// Split a corpus archive (and its covariates) by user.
    Split(SplitArgs),
    /// Fit the Gibbs-sampled gDMR model (or its DMR and LDA baselines).
    FitGdmr(FitGdmrArgs),
    /// Fit the variational gSTM model (or plain STM with --stm).
    FitGstm(FitGstmArgs),
    /// Held-out score, coherence and, given groups, similarity.
    Eval(EvalArgs),
    /// Assign users to topics and split topics into size-bounded groups.
    FormGroups(FormGroupsArgs),
    /// Draw a demographically stratified sample from every group.
    Sample(SampleArgs),
    /// Execute the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    posts: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    max_df_frac: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthModel {
    Gdmr,
    Gstm,
    /// Prevalence driven by planted reply communities.
    Community,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "gdmr")]
    model: SynthModel,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    groups: usize,
    #[arg(long, default_value_t = 50)]
    doc_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 200)]
    walks: usize,
    #[arg(long, default_value_t = 30)]
    walk_len: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Lock-free parallel training; not bit-reproducible.
    #[arg(long)]
    fast: bool,
    /// Write demographic covariates only.
    #[arg(long)]
    no_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Covariate directory aligned with the corpus users.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives `train/` and `test/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Gdmr,
    Dmr,
    Lda,
}

#[derive(Debug, Args)]
struct FitGdmrArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 700)]
    warm: usize,
    #[arg(long, default_value_t = 10)]
    opt_period: usize,
    #[arg(long, value_enum, default_value = "gdmr")]
    mode: Mode,
    /// Drop the node-embedding columns.
    #[arg(long)]
    no_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Init {
    Spectral,
    Lda,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Prior {
    Laplace,
    Gaussian,
}

#[derive(Debug, Args)]
struct FitGstmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    #[arg(long, default_value_t = 75)]
    max_iters: usize,
    #[arg(long, value_enum, default_value = "spectral")]
    init: Init,
    #[arg(long, value_enum, default_value = "laplace")]
    prior: Prior,
    /// Keep the prevalence regression at zero (plain STM).
    #[arg(long)]
    stm: bool,
    #[arg(long)]
    no_embeddings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training corpus archive (coherence and vocabulary check).
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus archive.
    #[arg(long)]
    heldout: PathBuf,
    /// Held-out covariates; defaults to the held-out directory.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// groups.jsonl whose within-group similarity to report.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    ais_temps: usize,
    #[arg(long, default_value_t = 10)]
    ais_runs: usize,
    #[arg(long, default_value_t = 10)]
    top_m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FormGroupsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Feature covariates; defaults to the corpus directory.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    w_text: f64,
    #[arg(long, default_value_t = 0.3)]
    w_feat: f64,
    #[arg(long, default_value_t = 10)]
    min: usize,
    #[arg(long, default_value_t = 30)]
    max: usize,
    /// Solve capacity assignment exactly for topics up to this many users.
    #[arg(long, default_value_t = 0)]
    exact_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    groups: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus archive with member profiles; without it sampling is unstratified.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn manifest(stage: &str, args: &impl std::fmt::Debug, seed: u64, dir: &Path) -> Result<()> {
    let hash = sha256_hex(format!("{args:?}").as_bytes());
    Manifest::new(stage, &hash, seed).write(dir)?;
    Ok(())
}

fn covariates_for(corpus: &Corpus, dir: &Path) -> Result<CovariateMatrix> {
    let x = CovariateMatrix::read(dir)
        .with_context(|| format!("reading covariates from {}", dir.display()))?;
    if x.rows != corpus.num_users() {
        bail!(
            "covariates in {} have {} rows but the corpus has {} users",
            dir.display(),
            x.rows,
            corpus.num_users()
        );
    }
    Ok(x)
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(p).with_context(|| format!("opening {}", p.display()))?,
    ))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut prep = PreprocessConfig::default();
    if let Some(v) = a.min_df {
        prep.min_df = v;
    }
    if let Some(v) = a.max_df_frac {
        prep.max_df_frac = v;
    }
    prep.validate()?;
    let ing = ingest_jsonl(open(&a.posts)?, open(&a.profiles)?, &prep)?;
    write_corpus(&a.out, &ing.corpus)?;
    write_interactions(&a.out.join("interactions.jsonl"), &ing.posts)?;
    binio::write_json(&a.out.join("ingest_report.json"), &ing.report)?;
    manifest("data", a, 0, &a.out)?;
    println!(
        "{} users, {} tokens in vocabulary -> {}",
        ing.corpus.num_users(),
        ing.corpus.vocab.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let s = match a.model {
        SynthModel::Community => synth_community(&CommunityConfig {
            users: a.users,
            vocab: a.vocab,
            groups: a.groups,
            communities: a.groups,
            doc_len: a.doc_len,
            seed: a.seed,
            ..Default::default()
        })?,
        m => {
            let cfg = SynthConfig {
                users: a.users,
                vocab: a.vocab,
                groups: a.groups,
                doc_len: a.doc_len,
                seed: a.seed,
                ..Default::default()
            };
            match m {
                SynthModel::Gstm => synth_gstm(&cfg)?,
                _ => synth_gdmr(&cfg)?,
            }
        }
    };
    write_corpus(&a.out, &s.corpus)?;
    write_interactions(&a.out.join("interactions.jsonl"), &s.replies)?;
    s.covariates.write(&a.out)?;
    binio::write_json(&a.out.join("truth.json"), &s.truth)?;
    manifest("data", a, a.seed, &a.out)?;
    println!("{} users -> {}", s.corpus.num_users(), a.out.display());
    Ok(())
}

fn embed(a: &EmbedArgs, deterministic: bool) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let inter = a.corpus.join("interactions.jsonl");
    let posts = if inter.is_file() {
        read_interactions(&inter)?
    } else {
        log::warn!("{} not found; the reply graph is empty", inter.display());
        Vec::new()
    };
    let n2v = Node2VecConfig {
        dim: a.dims,
        walks_per_node: a.walks,
        walk_len: a.walk_len,
        window: a.window,
        p: a.p,
        q: a.q,
        epochs: a.epochs,
        seed: a.seed,
        mode: if a.fast && !deterministic {
            TrainMode::Fast
        } else {
            TrainMode::Deterministic
        },
        ..Default::default()
    };
    let enc = EncodingConfig {
        embedding: !a.no_embeddings,
        ..Default::default()
    };
    let e = pipeline::embed(&corpus, &posts, &n2v, &enc)?;
    e.write(&a.out, &corpus.users)?;
    manifest("embed", a, a.seed, &a.out)?;
    println!(
        "{} nodes, {} edges, {} covariate columns -> {}",
        e.graph.num_nodes,
        e.graph.edges.len(),
        e.covariates.cols,
        a.out.display()
    );
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let x = a
        .covariates
        .as_deref()
        .map(|d| covariates_for(&corpus, d))
        .transpose()?;
    let (train, test, s) = pipeline::split(&corpus, a.frac, a.seed)?;
    for (name, part, idx) in [("train", &train, &s.train), ("test", &test, &s.test)] {
        let dir = a.out.join(name);
        write_corpus(&dir, part)?;
        if let Some(x) = &x {
            x.subset_rows(idx).write(&dir)?;
        }
        manifest("data", a, a.seed, &dir)?;
    }
    println!(
        "{} train / {} test users",
        train.num_users(),
        test.num_users()
    );
    Ok(())
}

fn fit_gdmr(a: &FitGdmrArgs) -> Result<()> {
    let h = GdmrHyper {
        groups: a.groups,
        beta: a.beta,
        sigma: a.sigma,
        iters_total: a.iters,
        iters_warm: a.warm,
        opt_period: a.opt_period,
        mode: match a.mode {
            Mode::Gdmr => PriorMode::Gdmr,
            Mode::Dmr => PriorMode::Dmr,
            Mode::Lda => PriorMode::Lda,
        },
        seed: a.seed,
        ..Default::default()
    };
    h.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let mut x = covariates_for(&corpus, &a.covariates)?;
    if a.no_embeddings {
        x = x.without_embedding();
    }
    let f = gdmr::fit(&corpus, &x, &h)?;
    let m = GdmrModel::from_fit(&f, &corpus, &x, &h);
    m.write(&a.out, Some(&f.report))?;
    manifest("fit", a, a.seed, &a.out)?;
    println!("gDMR with {} groups -> {}", a.groups, a.out.display());
    Ok(())
}

fn fit_gstm(a: &FitGstmArgs) -> Result<()> {
    let h = GstmHyper {
        groups: a.groups,
        max_em_iters: a.max_iters,
        init: match a.init {
            Init::Spectral => InitScheme::Spectral,
            Init::Lda => InitScheme::Lda,
            Init::Random => InitScheme::Random,
        },
        content_prior: match a.prior {
            Prior::Laplace => ContentPrior::Laplace,
            Prior::Gaussian => ContentPrior::Gaussian,
        },
        freeze_prevalence: a.stm,
        seed: a.seed,
        ..Default::default()
    };
    h.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let mut x = covariates_for(&corpus, &a.covariates)?;
    if a.no_embeddings {
        x = x.without_embedding();
    }
    let f = gstm::fit(&corpus, &x, &h)?;
    let m = GstmModel::from_fit(&f, &corpus, &x, &h);
    m.write(&a.out, Some(&f.report), &corpus.vocab)?;
    manifest("fit", a, a.seed, &a.out)?;
    println!(
        "gSTM with {} groups, {} EM cycles -> {}",
        a.groups,
        f.report.objective.len(),
        a.out.display()
    );
    Ok(())
}

/// Map member ids of `groups.jsonl` onto corpus user indices.
fn labelled_groups(path: &Path, corpus: &Corpus) -> Result<Vec<(String, Vec<usize>)>> {
    let index: std::collections::HashMap<&str, usize> = corpus
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    read_groups_jsonl(path)?
        .into_iter()
        .map(|g| {
            let members = g
                .members
                .iter()
                .map(|u| {
                    index.get(u.as_str()).copied().with_context(|| {
                        format!("group {} member {u} is not in the corpus", g.group_id)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((g.group_id, members))
        })
        .collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = Fitted::read(&a.model)?;
    let train = read_corpus(&a.corpus)?;
    model.check_vocab(&train)?;
    let test = read_corpus(&a.heldout)?;
    let x_test = covariates_for(&test, a.covariates.as_deref().unwrap_or(&a.heldout))?;
    let ais = AisConfig {
        temps: a.ais_temps,
        runs: a.ais_runs,
        seed: a.seed,
        ..Default::default()
    };
    ais.validate()?;
    let held = model.heldout(&test, &train.vocab, &x_test, &ais)?;
    let coherence = umass(
        model.phi(),
        model.groups(),
        model.vocab_size(),
        &train.tokens,
        a.top_m,
    )?;
    let (similarity, baseline) = match &a.groups {
        Some(p) => {
            let groups = labelled_groups(p, &train)?;
            let vectors = tfidf(&train);
            (
                Some(within_group_similarity(&groups, &vectors)?),
                Some(random_baseline(&groups, &vectors, a.seed)?),
            )
        }
        None => (None, None),
    };
    let report = EvalReport {
        model: a.model.display().to_string(),
        held_out: Some(held),
        coherence,
        similarity,
        baseline,
    };
    report.write(&a.out, &train.users)?;
    manifest("eval", a, a.seed, &a.out)?;
    let h = report.held_out.as_ref().expect("set above");
    println!(
        "held-out {} per token {:.4}, coherence {:.4} -> {}",
        h.scale,
        h.per_token,
        report.coherence.mean,
        a.out.display()
    );
    Ok(())
}

fn form(a: &FormGroupsArgs) -> Result<()> {
    let model = Fitted::read(&a.model)?;
    let corpus = read_corpus(&a.corpus)?;
    model.check_vocab(&corpus)?;
    if model.users() != corpus.users.as_slice() {
        bail!(
            "the model was fit on a different set of users than {}",
            a.corpus.display()
        );
    }
    let x = covariates_for(&corpus, a.covariates.as_deref().unwrap_or(&a.corpus))?;
    let cfg = AssignConfig {
        w_text: a.w_text,
        w_feat: a.w_feat,
        min_size: a.min,
        max_size: a.max,
        exact_max_points: a.exact_max,
        ..Default::default()
    };
    let vectors = tfidf(&corpus);
    let set = form_groups(model.theta(), model.groups(), &vectors, &x, &cfg, a.seed)?;
    binio::ensure_dir(&a.out)?;
    set.write_jsonl(&a.out.join("groups.jsonl"), &corpus.users)?;
    let rows = forum_analysis(&corpus.profiles, &set.groups, &vectors);
    binio::write_text(&a.out.join("forum_report.csv"), &forum_report_csv(&rows))?;
    binio::write_json(&a.out.join("unassigned.json"), &set.unassigned)?;
    manifest("groups", a, a.seed, &a.out)?;
    let flagged = set.groups.iter().filter(|g| g.undersized).count();
    println!(
        "{} groups ({flagged} undersized), {} unassigned -> {}",
        set.groups.len(),
        set.unassigned.len(),
        a.out.display()
    );
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let groups = read_groups_jsonl(&a.groups)?;
    let corpus = a.corpus.as_deref().map(read_corpus).transpose()?;
    for g in &groups {
        let profiles: Vec<UserProfile> = match &corpus {
            Some(c) => g
                .members
                .iter()
                .map(|u| {
                    c.users
                        .iter()
                        .position(|v| v == u)
                        .map(|i| c.profiles[i].clone())
                        .with_context(|| format!("member {u} is not in the corpus"))
                })
                .collect::<Result<_>>()?,
            None => g
                .members
                .iter()
                .map(|u| UserProfile {
                    user_id: u.clone(),
                    ..Default::default()
                })
                .collect(),
        };
        let local: Vec<usize> = (0..g.members.len()).collect();
        let picked: Vec<&str> = stratified_sample(&local, &profiles, a.k, a.seed)
            .into_iter()
            .map(|i| g.members[i].as_str())
            .collect();
        println!(
            "{}",
            serde_json::json!({ "group_id": g.group_id, "sample": picked })
        );
    }
    Ok(())
}

fn run(a: &RunArgs, deterministic: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if deterministic {
        cfg.deterministic = true;
    }
    let s = pipeline::run(&cfg)?;
    println!(
        "{:<40} {:>6} {:>12} {:>10}",
        "model", "scale", "per-token", "coherence"
    );
    for r in &s.comparison {
        println!(
            "{:<40} {:>6} {:>12.4} {:>10.4}",
            r.model, r.heldout_scale, r.heldout_per_token, r.coherence
        );
    }
    if let Some(gap) = s.similarity_gap {
        println!(
            "{} groups; median similarity minus random baseline: {gap:.4}",
            s.groups
        );
    }
    println!("artifacts in {}", s.out.display());
    Ok(())
}

/// 2 for configuration errors, 3 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for c in e.chain() {
        if let Some(s) = c.downcast_ref::<pipeline::StageError>() {
            return if s.is_config() { 2 } else { 3 };
        }
        if let Some(s) = c.downcast_ref::<cohort::Error>() {
            return if s.is_config() { 2 } else { 3 };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let r = match &cli.cmd {
        Cmd::Ingest(a) => ingest(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Embed(a) => embed(a, cli.deterministic),
        Cmd::Split(a) => split(a),
        Cmd::FitGdmr(a) => fit_gdmr(a),
        Cmd::FitGstm(a) => fit_gstm(a),
        Cmd::Eval(a) => eval(a),
        Cmd::FormGroups(a) => form(a),
        Cmd::Sample(a) => sample(a),
        Cmd::Run(a) => run(a, cli.deterministic),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
