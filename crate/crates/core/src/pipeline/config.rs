//! Run configuration: one TOML file plus `COHORT_` environment overrides.
//!
//! An override `COHORT_GDMR__GROUPS=8` sets `gdmr.groups`; path segments are
//! separated by a double underscore and lowercased. Values are parsed as TOML
//! scalars when possible and as strings otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CommunityConfig, PreprocessConfig};
use crate::error::{Error, Result};
use crate::evalkit::AisConfig;
use crate::gdmr::GdmrHyper;
use crate::grouper::AssignConfig;
use crate::gstm::GstmHyper;
use crate::netembed::{EncodingConfig, Node2VecConfig};
use crate::util::sha256_hex;

pub const ENV_PREFIX: &str = "COHORT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Planted-community synthetic corpus.
    #[default]
    Synth,
    /// JSON-Lines posts and profiles.
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: Source,
    pub posts: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
}

/// The six comparison rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lda,
    Dmr,
    #[serde(rename = "gdmr_noemb")]
    GdmrNoEmb,
    Gdmr,
    Stm,
    Gstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Lda,
        ModelKind::Dmr,
        ModelKind::GdmrNoEmb,
        ModelKind::Gdmr,
        ModelKind::Stm,
        ModelKind::Gstm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Lda => "LDA Model",
            ModelKind::Dmr => "DMR Model",
            ModelKind::GdmrNoEmb => "gDMR Model (without node embeddings)",
            ModelKind::Gdmr => "gDMR Model (with node embeddings)",
            ModelKind::Stm => "STM Model",
            ModelKind::Gstm => "gSTM Model",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Lda => "lda",
            ModelKind::Dmr => "dmr",
            ModelKind::GdmrNoEmb => "gdmr_noemb",
            ModelKind::Gdmr => "gdmr",
            ModelKind::Stm => "stm",
            ModelKind::Gstm => "gstm",
        }
    }

    pub fn is_gstm(self) -> bool {
        matches!(self, ModelKind::Stm | ModelKind::Gstm)
    }

    pub fn uses_embedding(self) -> bool {
        !matches!(self, ModelKind::GdmrNoEmb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub top_m: usize,
    pub ais: AisConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_m: crate::evalkit::DEFAULT_TOP_M,
            ais: AisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupsConfig {
    /// Model whose θ seeds the groups.
    pub model: ModelKind,
    #[serde(flatten)]
    pub assign: AssignConfig,
    /// Members drawn per group for review.
    pub sample_k: usize,
}

impl Default for GroupsConfig {
    fn default() -> Self {
        GroupsConfig {
            model: ModelKind::Gdmr,
            assign: AssignConfig::default(),
            sample_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub split_frac: f64,
    /// Force the deterministic embedding trainer.
    pub deterministic: bool,
    pub out: PathBuf,
    pub models: Vec<ModelKind>,
    pub data: DataConfig,
    pub synth: CommunityConfig,
    pub preprocess: PreprocessConfig,
    pub embed: Node2VecConfig,
    pub encoding: EncodingConfig,
    pub gdmr: GdmrHyper,
    pub gstm: GstmHyper,
    pub eval: EvalConfig,
    pub groups: GroupsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            split_frac: 0.8,
            deterministic: true,
            out: PathBuf::from("run"),
            models: ModelKind::ALL.to_vec(),
            data: DataConfig::default(),
            synth: CommunityConfig::default(),
            preprocess: PreprocessConfig::default(),
            embed: Node2VecConfig::default(),
            encoding: EncodingConfig::default(),
            gdmr: GdmrHyper::default(),
            gstm: GstmHyper::default(),
            eval: EvalConfig::default(),
            groups: GroupsConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path crosses non-table key `{p}`")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parse TOML text and apply `overrides` (`(name, value)` pairs whose names
    /// carry the `COHORT_` prefix; others are ignored).
    pub fn from_toml_with<I: IntoIterator<Item = (String, String)>>(
        text: &str,
        overrides: I,
    ) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for (name, value) in overrides {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            if path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("malformed override {name}")));
            }
            set_path(&mut table, &path, parse_scalar(&value))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and apply overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with(&text, std::env::vars())?;
        // Relative data paths are resolved against the config file.
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.posts, &mut cfg.data.profiles]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_frac > 0.0 && self.split_frac < 1.0) {
            return Err(Error::Config(format!(
                "split_frac must lie in (0, 1), got {}",
                self.split_frac
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if !self.models.contains(&self.groups.model) {
            return Err(Error::Config(format!(
                "groups.model `{}` is not among the selected models",
                self.groups.model.slug()
            )));
        }
        if self.data.source == Source::Jsonl
            && (self.data.posts.is_none() || self.data.profiles.is_none())
        {
            return Err(Error::Config(
                "data.source = \"jsonl\" needs data.posts and data.profiles".into(),
            ));
        }
        if self.eval.top_m < 2 {
            return Err(Error::Config("eval.top_m must be at least 2".into()));
        }
        self.preprocess.validate()?;
        self.gdmr.validate()?;
        self.gstm.validate()?;
        self.eval.ais.validate()?;
        self.groups.assign.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration,
    /// excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        sha256_hex(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}
