use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved begin-of-sequence id.
pub const BOS_ID: u32 = 0;
/// Reserved unknown-token id.
pub const UNK_ID: u32 = 1;

pub const BOS_TOKEN: &str = "<s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Frequency-ranked token inventory with dense ids. Ids 0 and 1 are the
/// reserved begin-of-sequence and unknown tokens; regular tokens follow in
/// descending corpus frequency (ties broken lexicographically), so lower ids
/// always mean more frequent tokens.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from raw text: lowercased, whitespace-tokenized, capped at
    /// `cap` total entries (including the two reserved ids).
    pub fn from_corpus_text(text: &str, cap: usize) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::CorpusTooSmall("no tokens in corpus".into()));
        }
        if cap < 3 {
            return Err(Error::InvalidParameter(format!(
                "vocab cap {cap} leaves no room for regular tokens"
            )));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - 2);
        Ok(Self::from_ranked_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    /// Build from pre-ranked regular tokens (reserved entries added first).
    pub fn from_ranked_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![BOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries always present
    }

    pub fn lookup(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.index_of(token).unwrap_or(UNK_ID)
    }

    /// Encode text with unknown-token fallback.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|t| self.id_or_unk(&t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.lookup(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// A token id sequence tagged with the model that produced it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub source_model: String,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, source_model: impl Into<String>) -> Self {
        Self {
            ids,
            source_model: source_model.into(),
        }
    }

    pub fn external(ids: Vec<u32>) -> Self {
        Self::new(ids, "external")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
