use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One forum post as it arrives on the JSON-Lines stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to_author_id: Option<String>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// Forum the post was made in, when the source records one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forum: Option<String>,
}

impl Post {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.post_id.is_empty() {
            return Err("post_id is empty".into());
        }
        if self.author_id.is_empty() {
            return Err("author_id is empty".into());
        }
        Ok(())
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unspecified,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Unspecified];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unspecified => "unspecified",
        }
    }
}

/// Age in closed decade buckets.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub enum AgeBucket {
    #[serde(rename = "0-9")]
    A0,
    #[serde(rename = "10-19")]
    A10,
    #[serde(rename = "20-29")]
    A20,
    #[serde(rename = "30-39")]
    A30,
    #[serde(rename = "40-49")]
    A40,
    #[serde(rename = "50-59")]
    A50,
    #[serde(rename = "60-69")]
    A60,
    #[serde(rename = "70-79")]
    A70,
    #[serde(rename = "80-89")]
    A80,
    #[default]
    #[serde(rename = "unspecified")]
    Unspecified,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 10] = [
        AgeBucket::A0,
        AgeBucket::A10,
        AgeBucket::A20,
        AgeBucket::A30,
        AgeBucket::A40,
        AgeBucket::A50,
        AgeBucket::A60,
        AgeBucket::A70,
        AgeBucket::A80,
        AgeBucket::Unspecified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeBucket::A0 => "0-9",
            AgeBucket::A10 => "10-19",
            AgeBucket::A20 => "20-29",
            AgeBucket::A30 => "30-39",
            AgeBucket::A40 => "40-49",
            AgeBucket::A50 => "50-59",
            AgeBucket::A60 => "60-69",
            AgeBucket::A70 => "70-79",
            AgeBucket::A80 => "80-89",
            AgeBucket::Unspecified => "unspecified",
        }
    }

    pub fn from_age(age: u32) -> Self {
        match age / 10 {
            0 => AgeBucket::A0,
            1 => AgeBucket::A10,
            2 => AgeBucket::A20,
            3 => AgeBucket::A30,
            4 => AgeBucket::A40,
            5 => AgeBucket::A50,
            6 => AgeBucket::A60,
            7 => AgeBucket::A70,
            8 => AgeBucket::A80,
            _ => AgeBucket::Unspecified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub gender: Gender,
    #[serde(default)]
    pub age_bucket: AgeBucket,
    #[serde(default, deserialize_with = "de_country")]
    pub country: Option<String>,
    #[serde(default)]
    pub membership_year: Option<i32>,
    /// Forums the user posted in (filled during ingestion from post records).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forums: Vec<String>,
}

fn de_country<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<String>, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    Ok(v.filter(|s| !s.is_empty() && s != "unspecified"))
}

impl UserProfile {
    pub fn unspecified(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            ..Default::default()
        }
    }
}

/// Per-user bags of tokens over an indexed vocabulary.
///
/// Documents are user-level aggregates: `tokens[u]` is the concatenation of
/// every filtered token user `u` wrote.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub vocab: Vec<String>,
    pub users: Vec<String>,
    pub tokens: Vec<Vec<u32>>,
    pub profiles: Vec<UserProfile>,
}

impl Corpus {
    pub fn new(
        vocab: Vec<String>,
        users: Vec<String>,
        tokens: Vec<Vec<u32>>,
        profiles: Vec<UserProfile>,
    ) -> Result<Self> {
        let c = Corpus {
            vocab,
            users,
            tokens,
            profiles,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.users.len();
        if self.tokens.len() != u {
            return Err(Error::Dimension {
                what: "token lists vs users",
                expected: u,
                got: self.tokens.len(),
            });
        }
        if self.profiles.len() != u {
            return Err(Error::Dimension {
                what: "profiles vs users",
                expected: u,
                got: self.profiles.len(),
            });
        }
        let w = self.vocab.len() as u32;
        if let Some((ui, _)) = self
            .tokens
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&x| x >= w))
        {
            return Err(Error::InvalidInput(format!(
                "user {} has a token index outside the vocabulary",
                self.users[ui]
            )));
        }
        let mut seen = HashMap::with_capacity(u);
        for (i, id) in self.users.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::InvalidInput(format!("user {i} has an empty id")));
            }
            if seen.insert(id.as_str(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate user id {id}")));
            }
            if self.profiles[i].user_id != *id {
                return Err(Error::InvalidInput(format!(
                    "profile {i} belongs to {} not {id}",
                    self.profiles[i].user_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn doc_len(&self, u: usize) -> usize {
        self.tokens[u].len()
    }

    pub fn total_tokens(&self) -> usize {
        self.tokens.iter().map(Vec::len).sum()
    }

    pub fn empty_users(&self) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&u| self.tokens[u].is_empty())
            .collect()
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    pub fn vocab_hash(&self) -> String {
        crate::util::vocab_hash(&self.vocab)
    }

    /// Sorted (word, count) pairs for one user.
    pub fn counts(&self, u: usize) -> Vec<(u32, u32)> {
        let mut t = self.tokens[u].clone();
        t.sort_unstable();
        let mut out: Vec<(u32, u32)> = Vec::new();
        for w in t {
            match out.last_mut() {
                Some((lw, c)) if *lw == w => *c += 1,
                _ => out.push((w, 1)),
            }
        }
        out
    }

    /// Number of users whose document contains each word.
    pub fn doc_freq(&self) -> Vec<u32> {
        let mut df = vec![0u32; self.vocab_size()];
        for u in 0..self.num_users() {
            for (w, _) in self.counts(u) {
                df[w as usize] += 1;
            }
        }
        df
    }

    /// Dense U×W count matrix (row-major). Intended for tests and small corpora.
    pub fn count_matrix(&self) -> Vec<u32> {
        let w = self.vocab_size();
        let mut m = vec![0u32; self.num_users() * w];
        for (u, toks) in self.tokens.iter().enumerate() {
            for &t in toks {
                m[u * w + t as usize] += 1;
            }
        }
        m
    }

    /// Users at the given indices, sharing this corpus's vocabulary.
    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            vocab: self.vocab.clone(),
            users: idx.iter().map(|&i| self.users[i].clone()).collect(),
            tokens: idx.iter().map(|&i| self.tokens[i].clone()).collect(),
            profiles: idx.iter().map(|&i| self.profiles[i].clone()).collect(),
        }
    }

    /// Re-index this corpus's tokens against another vocabulary, dropping words
    /// the target does not contain. Returns the mapped token lists and the
    /// number of dropped tokens.
    pub fn map_to_vocab(&self, vocab: &[String]) -> (Vec<Vec<u32>>, usize) {
        let index: HashMap<&str, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let remap: Vec<Option<u32>> = self
            .vocab
            .iter()
            .map(|s| index.get(s.as_str()).copied())
            .collect();
        let mut dropped = 0;
        let tokens = self
            .tokens
            .iter()
            .map(|toks| {
                toks.iter()
                    .filter_map(|&t| {
                        let m = remap[t as usize];
                        if m.is_none() {
                            dropped += 1;
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        (tokens, dropped)
    }
}
