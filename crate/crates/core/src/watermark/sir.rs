//! SIR-lite: bias signs depend only on the synonym-class content of the
//! preceding context, so semantics-preserving edits (same-class substitutions,
//! reorderings) leave the bias vector unchanged.

use crate::error::{Error, Result};
use crate::prf::{mix3, mix64};
use crate::synonyms::SynonymTable;
use crate::watermark::WatermarkKey;
use crate::Scalar;

/// Order-free hash of the multiset of synonym classes in the context.
pub fn sirlite_context_hash(context: &[u32], table: &SynonymTable) -> u64 {
    context
        .iter()
        .fold(0u64, |acc, &id| acc.wrapping_add(mix64(table.class_of(id) as u64 + 1)))
}

/// Sign for one token given a precomputed context hash: `true` means +delta.
/// All tokens of one class share a sign by construction.
pub fn sirlite_token_sign(
    key: WatermarkKey,
    context_hash: u64,
    token_class: u32,
) -> bool {
    mix3(key.0, context_hash, token_class as u64) >> 63 == 1
}

/// Full ±delta bias vector over the vocabulary.
pub fn sirlite_bias_vector(
    key: WatermarkKey,
    context: &[u32],
    table: &SynonymTable,
    delta: Scalar,
    vocab_size: usize,
) -> Result<Vec<Scalar>> {
    if table.num_classes() < 2 {
        return Err(Error::InvalidParameter(
            "SIR-lite needs at least 2 synonym classes".into(),
        ));
    }
    if table.vocab_size() != vocab_size {
        return Err(Error::InvalidInput(format!(
            "synonym table covers {} tokens, vocabulary has {vocab_size}",
            table.vocab_size()
        )));
    }
    let ctx_hash = sirlite_context_hash(context, table);
    Ok((0..vocab_size as u32)
        .map(|v| {
            if sirlite_token_sign(key, ctx_hash, table.class_of(v)) {
                delta
            } else {
                -delta
            }
        })
        .collect())
}
