use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{PreprocessConfig, Tokenizer};
use super::types::{Corpus, Post, UserProfile};
use crate::error::{Error, Result};

/// A record that could not be decoded or failed validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub stream: String,
    /// 1-based line number in the stream; 0 for in-memory records.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub posts_read: usize,
    pub profiles_read: usize,
    pub rejected: Vec<RecordError>,
    /// Users kept with zero surviving tokens.
    pub empty_users: Vec<String>,
    pub users_without_profile: usize,
    pub vocab_size: usize,
}

impl IngestReport {
    pub fn reject_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Result of ingestion: the corpus, the accepted posts (for graph building),
/// and the reject/flag report.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub posts: Vec<Post>,
    pub report: IngestReport,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
    stream: &str,
    rejected: &mut Vec<RecordError>,
) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(stream, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => out.push((i + 1, v)),
            Err(e) => rejected.push(RecordError {
                stream: stream.to_string(),
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Ingest JSON-Lines post and profile streams. Malformed lines are rejected
/// individually and reported; they never abort the run.
pub fn ingest_jsonl(
    posts: impl BufRead,
    profiles: impl BufRead,
    prep: &PreprocessConfig,
) -> Result<Ingested> {
    let mut rejected = Vec::new();
    let posts = read_jsonl::<Post>(posts, "posts", &mut rejected)?;
    let profiles = read_jsonl::<UserProfile>(profiles, "profiles", &mut rejected)?;
    ingest_records(posts, profiles, prep, rejected)
}

/// Ingest in-memory records.
pub fn ingest(
    posts: &[Post],
    profiles: &[UserProfile],
    prep: &PreprocessConfig,
) -> Result<Ingested> {
    ingest_records(
        posts.iter().cloned().map(|p| (0, p)).collect(),
        profiles.iter().cloned().map(|p| (0, p)).collect(),
        prep,
        Vec::new(),
    )
}

fn ingest_records(
    posts: Vec<(usize, Post)>,
    profiles: Vec<(usize, UserProfile)>,
    prep: &PreprocessConfig,
    mut rejected: Vec<RecordError>,
) -> Result<Ingested> {
    prep.validate()?;
    let tokenizer = Tokenizer::new(prep)?;
    let posts_read = posts.len();
    let profiles_read = profiles.len();

    let mut profile_by_id: BTreeMap<String, UserProfile> = BTreeMap::new();
    for (line, p) in profiles {
        if p.user_id.is_empty() {
            rejected.push(RecordError {
                stream: "profiles".into(),
                line,
                message: "user_id is empty".into(),
            });
            continue;
        }
        if profile_by_id.contains_key(&p.user_id) {
            rejected.push(RecordError {
                stream: "profiles".into(),
                line,
                message: format!("duplicate profile for {}", p.user_id),
            });
            continue;
        }
        profile_by_id.insert(p.user_id.clone(), p);
    }

    let mut accepted = Vec::with_capacity(posts.len());
    for (line, p) in posts {
        match p.validate() {
            Ok(()) => accepted.push(p),
            Err(message) => rejected.push(RecordError {
                stream: "posts".into(),
                line,
                message,
            }),
        }
    }

    // Users are ordered by id so the index does not depend on stream order.
    let mut user_set: BTreeSet<String> = profile_by_id.keys().cloned().collect();
    user_set.extend(accepted.iter().map(|p| p.author_id.clone()));
    let users: Vec<String> = user_set.into_iter().collect();
    let uindex: HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let tokenized: Vec<Vec<String>> = accepted
        .par_iter()
        .map(|p| tokenizer.tokenize(&p.body))
        .collect();

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); users.len()];
    let mut forums: Vec<BTreeSet<String>> = vec![BTreeSet::new(); users.len()];
    for (p, toks) in accepted.iter().zip(tokenized) {
        let u = uindex[p.author_id.as_str()];
        raw[u].extend(toks);
        if let Some(f) = &p.forum {
            forums[u].insert(f.clone());
        }
    }

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for toks in &raw {
        let distinct: BTreeSet<&str> = toks.iter().map(String::as_str).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let max_df = prep.max_df_frac * users.len() as f64;
    let vocab: Vec<String> = df
        .iter()
        .filter(|(_, &d)| d >= prep.min_df && d as f64 <= max_df)
        .map(|(t, _)| t.to_string())
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let windex: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();

    let tokens: Vec<Vec<u32>> = raw
        .iter()
        .map(|toks| {
            toks.iter()
                .filter_map(|t| windex.get(t.as_str()).copied())
                .collect()
        })
        .collect();

    let mut users_without_profile = 0;
    let profiles: Vec<UserProfile> = users
        .iter()
        .zip(forums)
        .map(|(id, fs)| {
            let mut p = profile_by_id.remove(id).unwrap_or_else(|| {
                users_without_profile += 1;
                UserProfile::unspecified(id.clone())
            });
            let mut all: BTreeSet<String> = p.forums.drain(..).collect();
            all.extend(fs);
            p.forums = all.into_iter().collect();
            p
        })
        .collect();

    let corpus = Corpus::new(vocab, users, tokens, profiles)?;
    let empty_users: Vec<String> = corpus
        .empty_users()
        .into_iter()
        .map(|u| corpus.users[u].clone())
        .collect();
    if !empty_users.is_empty() {
        log::warn!("{} users have no tokens after filtering", empty_users.len());
    }
    if !rejected.is_empty() {
        log::warn!("rejected {} malformed records", rejected.len());
    }
    let report = IngestReport {
        posts_read,
        profiles_read,
        rejected,
        empty_users,
        users_without_profile,
        vocab_size: corpus.vocab_size(),
    };
    Ok(Ingested {
        corpus,
        posts: accepted,
        report,
    })
}

/// Render a corpus back into post records, `chunk` tokens per post.
pub fn emit_posts(corpus: &Corpus, chunk: usize) -> Vec<Post> {
    let chunk = chunk.max(1);
    let mut out = Vec::new();
    for (u, toks) in corpus.tokens.iter().enumerate() {
        for (i, part) in toks.chunks(chunk).enumerate() {
            let body = part
                .iter()
                .map(|&t| corpus.vocab[t as usize].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            out.push(Post {
                post_id: format!("{}-p{}", corpus.users[u], i),
                author_id: corpus.users[u].clone(),
                reply_to_author_id: None,
                body,
                timestamp: None,
                forum: None,
            });
        }
    }
    out
}
