use std::collections::HashSet;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Common English function words.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "im",
    "ive",
    "dont",
    "also",
    "get",
    "got",
    "one",
    "like",
    "really",
    "know",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    /// Regex whose matches are tokens. `None` uses Unicode word segmentation.
    pub token_pattern: Option<String>,
    pub stopwords: Vec<String>,
    /// Minimum number of users whose document must contain a token.
    pub min_df: usize,
    /// Maximum fraction of users whose document may contain a token.
    pub max_df_frac: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            lowercase: true,
            token_pattern: None,
            stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            min_df: 5,
            max_df_frac: 0.5,
        }
    }
}

impl PreprocessConfig {
    /// Lowercase Unicode words with no stopwords and no frequency filtering.
    pub fn unfiltered() -> Self {
        PreprocessConfig {
            lowercase: true,
            token_pattern: None,
            stopwords: Vec::new(),
            min_df: 1,
            max_df_frac: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_df_frac > 0.0 && self.max_df_frac <= 1.0) {
            return Err(Error::Config(format!(
                "max_df_frac must lie in (0, 1], got {}",
                self.max_df_frac
            )));
        }
        Ok(())
    }
}

/// Compiled tokenizer for a [`PreprocessConfig`].
pub struct Tokenizer {
    lowercase: bool,
    pattern: Option<Regex>,
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new(cfg: &PreprocessConfig) -> Result<Self> {
        let pattern = cfg
            .token_pattern
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| Error::Config(format!("bad token pattern: {e}")))?;
        Ok(Tokenizer {
            lowercase: cfg.lowercase,
            pattern,
            stopwords: cfg.stopwords.iter().cloned().collect(),
        })
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            std::borrow::Cow::Owned(text.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(text)
        };
        let raw: Vec<&str> = match &self.pattern {
            Some(re) => re.find_iter(&text).map(|m| m.as_str()).collect(),
            None => text.unicode_words().collect(),
        };
        raw.into_iter()
            .filter(|t| !self.stopwords.contains(*t))
            .map(str::to_owned)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tokenizer_lowercases_and_drops_stopwords() {
        let t = Tokenizer::new(&PreprocessConfig::default()).unwrap();
        assert_eq!(
            t.tokenize("The Doctor said: PAIN, pain!"),
            vec!["doctor", "said", "pain", "pain"]
        );
    }

    #[test]
    fn regex_pattern_overrides_segmentation() {
        let cfg = PreprocessConfig {
            token_pattern: Some(r"\b\w\w+\b".into()),
            ..PreprocessConfig::unfiltered()
        };
        let t = Tokenizer::new(&cfg).unwrap();
        assert_eq!(t.tokenize("a bc def"), vec!["bc", "def"]);
    }
}
