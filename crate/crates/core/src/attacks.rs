//! Watermark attacks: random same-class substitution, windowed paraphrase
//! (shuffle + lexical changes), and a key-free removal attack constrained by
//! a perplexity budget. All attacks preserve text length.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::DetectionResult;
use crate::error::{Error, Result};
use crate::lm::{NGramModel, TokenSequence};
use crate::synonyms::SynonymTable;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Substitution,
    Paraphrase,
    Removal,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Substitution => "substitution",
            AttackKind::Paraphrase => "paraphrase",
            AttackKind::Removal => "removal",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Per-position edit probability (substitution, paraphrase).
    pub edit_rate: Scalar,
    /// Shuffle window (paraphrase).
    pub window: usize,
    /// Allowed perplexity multiplier vs. the original text (removal).
    pub perplexity_budget: Scalar,
    pub rng_seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edit_rate) {
            return Err(Error::InvalidParameter(format!(
                "edit_rate must lie in [0,1], got {}",
                self.edit_rate
            )));
        }
        match self.kind {
            AttackKind::Paraphrase if self.window < 2 => Err(Error::InvalidParameter(
                "paraphrase window must be >= 2".into(),
            )),
            AttackKind::Removal if self.perplexity_budget < 1.0 => Err(Error::InvalidParameter(
                "perplexity budget must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn apply(
        &self,
        text: &TokenSequence,
        table: &SynonymTable,
        reference_lm: Option<&NGramModel>,
    ) -> Result<TokenSequence> {
        self.validate()?;
        match self.kind {
            AttackKind::Substitution => {
                Ok(substitution_attack(text, table, self.edit_rate, self.rng_seed))
            }
            AttackKind::Paraphrase => paraphrase_attack(
                text,
                self.window,
                self.edit_rate,
                table,
                self.rng_seed,
            ),
            AttackKind::Removal => {
                let lm = reference_lm.ok_or_else(|| {
                    Error::InvalidParameter("removal attack needs a reference model".into())
                })?;
                removal_attack(text, lm, table, self.perplexity_budget, self.rng_seed)
            }
        }
    }
}

/// Replace each position independently with probability `edit_rate` by a
/// uniformly chosen same-class token (possibly itself).
pub fn substitution_attack(
    text: &TokenSequence,
    table: &SynonymTable,
    edit_rate: Scalar,
    rng_seed: u64,
) -> TokenSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = text.ids.clone();
    for id in ids.iter_mut() {
        if rng.gen::<Scalar>() < edit_rate {
            let members = table.members(table.class_of(*id));
            *id = *members.choose(&mut rng).expect("classes are nonempty");
        }
    }
    TokenSequence::new(ids, text.source_model.clone())
}

/// Windowed paraphrase: consecutive windows are shuffled with probability
/// `edit_rate`, then same-class lexical substitution runs at `edit_rate / 2`.
pub fn paraphrase_attack(
    text: &TokenSequence,
    window: usize,
    edit_rate: Scalar,
    table: &SynonymTable,
    rng_seed: u64,
) -> Result<TokenSequence> {
    if window < 2 {
        return Err(Error::InvalidParameter(
            "paraphrase window must be >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = text.ids.clone();
    for chunk in ids.chunks_mut(window) {
        if rng.gen::<Scalar>() < edit_rate {
            chunk.shuffle(&mut rng);
        }
    }
    let shuffled = TokenSequence::new(ids, text.source_model.clone());
    Ok(substitution_attack(&shuffled, table, edit_rate / 2.0, rng_seed.wrapping_add(1)))
}

/// Key-free removal: greedy same-class substitution minimizing a watermark
/// proxy score under a perplexity budget.
///
/// The proxy is the squared deviation of each (prev, current) pair's surprise
/// from the reference model's expected surprise (its conditional entropy):
/// watermarked text pairs are systematically atypical under the reference
/// model, and pushing pair statistics back toward expectation strips that
/// signal without ever reading a key or scheme configuration.
pub fn removal_attack(
    text: &TokenSequence,
    reference_lm: &NGramModel,
    table: &SynonymTable,
    perplexity_budget: Scalar,
    rng_seed: u64,
) -> Result<TokenSequence> {
    if perplexity_budget < 1.0 {
        return Err(Error::InvalidParameter(
            "perplexity budget must be >= 1".into(),
        ));
    }
    if text.is_empty() {
        return Ok(text.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = text.ids.clone();
    let n = ids.len();

    // Entropy of the bigram distribution after each possible previous token,
    // cached per previous id.
    let mut entropy_cache: std::collections::HashMap<u32, Scalar> = std::collections::HashMap::new();
    let mut entropy = |lm: &NGramModel, prev: u32| -> Scalar {
        *entropy_cache
            .entry(prev)
            .or_insert_with(|| lm.context_entropy(&[prev]))
    };
    let pair_dev = |lm: &NGramModel, entropy: &mut dyn FnMut(&NGramModel, u32) -> Scalar,
                    prev: u32, cur: u32| -> Scalar {
        let s = -lm.token_prob(&[prev], cur).ln();
        let h = entropy(lm, prev);
        (s - h) * (s - h)
    };

    // Track total NLL for the budget constraint incrementally.
    let mut nll: Vec<Scalar> = (0..n).map(|i| reference_lm.position_nll(&ids, i)).collect();
    let base_total: Scalar = nll.iter().sum();
    let budget_total = if perplexity_budget.is_infinite() {
        Scalar::INFINITY
    } else {
        // ppl <= budget * ppl0  <=>  total_nll <= total_nll0 + n ln(budget)
        base_total + n as Scalar * perplexity_budget.ln()
    };
    let mut total: Scalar = base_total;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let lm_order = reference_lm.order();

    for &i in &order {
        let original = ids[i];
        let members = table.members(table.class_of(original));
        if members.len() < 2 {
            continue;
        }
        let prev = if i > 0 { Some(ids[i - 1]) } else { None };
        let next = if i + 1 < n { Some(ids[i + 1]) } else { None };
        let dev_at = |ids_i: u32, entropy: &mut dyn FnMut(&NGramModel, u32) -> Scalar| {
            let mut d = 0.0;
            if let Some(p) = prev {
                d += pair_dev(reference_lm, entropy, p, ids_i);
            }
            if let Some(nx) = next {
                d += pair_dev(reference_lm, entropy, ids_i, nx);
            }
            d
        };
        let current_dev = dev_at(original, &mut entropy);

        let mut best: Option<(Scalar, u32)> = None;
        for &cand in members {
            if cand == original {
                continue;
            }
            let d = dev_at(cand, &mut entropy);
            if d < current_dev {
                match best {
                    Some((bd, _)) if d >= bd => {}
                    _ => best = Some((d, cand)),
                }
            }
        }
        let Some((_, cand)) = best else { continue };

        // Budget check with an incremental NLL update over the affected
        // window [i, i + order).
        let hi = (i + lm_order).min(n);
        let old_ids = ids[i];
        ids[i] = cand;
        let mut delta = 0.0;
        let mut new_terms = Vec::with_capacity(hi - i);
        for j in i..hi {
            let t = reference_lm.position_nll(&ids, j);
            delta += t - nll[j];
            new_terms.push(t);
        }
        if total + delta <= budget_total {
            total += delta;
            for (off, t) in new_terms.into_iter().enumerate() {
                nll[i + off] = t;
            }
        } else {
            ids[i] = old_ids;
        }
    }
    Ok(TokenSequence::new(ids, text.source_model.clone()))
}

/// Fraction of texts flagged before the attack that are no longer flagged
/// after it. Texts never flagged pre-attack do not enter the denominator.
pub fn attack_success_rate(
    pre: &[DetectionResult],
    post: &[DetectionResult],
) -> Result<Scalar> {
    if pre.len() != post.len() {
        return Err(Error::InvalidInput(format!(
            "pre/post result counts differ: {} vs {}",
            pre.len(),
            post.len()
        )));
    }
    let flagged_pre = pre.iter().filter(|r| r.is_watermarked).count();
    if flagged_pre == 0 {
        return Ok(0.0);
    }
    let flipped = pre
        .iter()
        .zip(post)
        .filter(|(a, b)| a.is_watermarked && !b.is_watermarked)
        .count();
    Ok(flipped as Scalar / flagged_pre as Scalar)
}
