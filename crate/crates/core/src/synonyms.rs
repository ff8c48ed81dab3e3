//! Deterministic synonym classes over the vocabulary.
//!
//! Stands in for a lexical database: tokens are grouped into classes and any
//! two tokens in the same class are treated as interchangeable. The same table
//! drives both the SIR-lite bias signs and the substitution attacks, so
//! "same-class substitution preserves the SIR-lite watermark" holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SynonymTable {
    class_of: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl SynonymTable {
    /// Group ids into frequency-rank buckets of `bucket_size` consecutive
    /// ids. The two reserved ids stay in singleton classes. Vocabularies are
    /// frequency-ranked, so each bucket holds tokens of comparable frequency.
    pub fn frequency_buckets(vocab_size: usize, bucket_size: usize) -> Result<Self> {
        if bucket_size == 0 {
            return Err(Error::InvalidParameter("bucket size must be >= 1".into()));
        }
        if vocab_size < 2 {
            return Err(Error::InvalidParameter(
                "vocabulary must contain the reserved ids".into(),
            ));
        }
        let mut class_of = vec![0u32; vocab_size];
        let mut members: Vec<Vec<u32>> = vec![vec![0], vec![1]];
        class_of[1] = 1;
        for (chunk_idx, start) in (2..vocab_size).step_by(bucket_size).enumerate() {
            let class = (chunk_idx + 2) as u32;
            let end = (start + bucket_size).min(vocab_size);
            let ids: Vec<u32> = (start as u32..end as u32).collect();
            for &id in &ids {
                class_of[id as usize] = class;
            }
            members.push(ids);
        }
        Ok(Self { class_of, members })
    }

    /// Classes by `id mod num_classes` (the SIR-lite default when no table is
    /// supplied).
    pub fn modulo(vocab_size: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 synonym classes".into(),
            ));
        }
        let mut class_of = vec![0u32; vocab_size];
        let mut members = vec![Vec::new(); num_classes];
        for id in 0..vocab_size {
            let class = id % num_classes;
            class_of[id] = class as u32;
            members[class].push(id as u32);
        }
        members.retain(|m| !m.is_empty());
        // Re-index after dropping empty classes (vocab smaller than classes).
        let mut table = Self {
            class_of: vec![0; vocab_size],
            members,
        };
        for (class, ids) in table.members.iter().enumerate() {
            for &id in ids {
                table.class_of[id as usize] = class as u32;
            }
        }
        Ok(table)
    }

    pub fn class_of(&self, id: u32) -> u32 {
        self.class_of[id as usize]
    }

    pub fn members(&self, class: u32) -> &[u32] {
        &self.members[class as usize]
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.class_of.len()
    }

    /// Mean class size over non-reserved tokens.
    pub fn mean_class_size(&self) -> f64 {
        let sizes: Vec<f64> = (2..self.vocab_size())
            .map(|id| self.members(self.class_of(id as u32)).len() as f64)
            .collect();
        crate::num::mean(&sizes)
    }
}
