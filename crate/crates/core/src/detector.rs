//! IP checkers: green-fraction z-tests for the logit family, permutation
//! alignment tests for EXP, and the model-level flagging rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TokenSequence;
use crate::num::{binomial_z, normal_upper_tail};
use crate::prf::mix64;
use crate::synonyms::SynonymTable;
use crate::watermark::{
    sirlite_context_hash, sirlite_token_sign, ExpKeySequence, PartitionCache, SchemeConfig,
    SchemeKind, WatermarkKey,
};
use crate::Scalar;

/// Default z threshold for the green-fraction test.
pub const DEFAULT_Z_THRESHOLD: Scalar = 4.0;
/// Default significance level for the permutation test.
pub const DEFAULT_ALPHA: Scalar = 0.01;
/// Default number of decoy keys in the permutation test.
pub const DEFAULT_PERMUTATIONS: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionResult {
    pub statistic: Scalar,
    pub p_value: Scalar,
    pub threshold: Scalar,
    pub is_watermarked: bool,
    pub tokens_scored: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub outputs_tested: usize,
    pub outputs_flagged: usize,
    pub flag_rate: Scalar,
    pub model_flagged: bool,
    pub flag_rate_threshold: Scalar,
}

/// z-test over recomputed green hits (KGW, Unigram) or bias signs (SIR-lite,
/// with null rate 1/2). The first `h` tokens are excluded from scoring; their
/// seeding context lies in the prompt. `vocab_size` must match the vocabulary
/// the text was generated over, or partitions will not line up.
pub fn green_fraction_test(
    text: &TokenSequence,
    scheme: &SchemeConfig,
    table: Option<&SynonymTable>,
    vocab_size: usize,
    z_threshold: Scalar,
) -> Result<DetectionResult> {
    scheme.validate()?;
    let skip = scheme.detection_skip();
    if text.len() < skip + 1 {
        return Err(Error::InsufficientText {
            needed: skip + 1,
            got: text.len(),
        });
    }
    let (hits, scored, null_rate) = match scheme.kind {
        SchemeKind::Kgw | SchemeKind::Unigram => {
            let mut cache = PartitionCache::new(scheme.key, scheme.gamma, vocab_size);
            let mut hits = 0usize;
            for i in skip..text.ids.len() {
                let window = &text.ids[i - skip..i];
                if cache.partition(window)?.is_green(text.ids[i]) {
                    hits += 1;
                }
            }
            (hits, text.ids.len() - skip, scheme.gamma)
        }
        SchemeKind::SirLite => {
            let fallback;
            let table = match table {
                Some(t) => t,
                None => {
                    fallback = SynonymTable::modulo(vocab_size, scheme.num_synonym_classes)?;
                    &fallback
                }
            };
            let mut hits = 0usize;
            let mut ctx_hash = sirlite_context_hash(&[], table);
            for &tok in &text.ids {
                if sirlite_token_sign(scheme.key, ctx_hash, table.class_of(tok)) {
                    hits += 1;
                }
                ctx_hash = ctx_hash.wrapping_add(mix64(table.class_of(tok) as u64 + 1));
            }
            (hits, text.ids.len(), 0.5)
        }
        SchemeKind::Exp => {
            return Err(Error::InvalidParameter(
                "EXP is detected by the alignment test, not the green-fraction test".into(),
            ))
        }
    };
    let z = binomial_z(hits as Scalar, scored as Scalar, null_rate);
    Ok(DetectionResult {
        statistic: z,
        p_value: normal_upper_tail(z),
        threshold: z_threshold,
        is_watermarked: z >= z_threshold,
        tokens_scored: scored,
    })
}

/// Parameters of the edit-tolerant alignment cost.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentParams {
    /// Per-edit (insertion/deletion) penalty. `None` calibrates it to the
    /// mean per-token cost of random text under the key sequence.
    pub edit_penalty: Option<Scalar>,
    /// Band half-width of the dynamic program.
    pub band: usize,
    pub alpha: Scalar,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        Self {
            edit_penalty: None,
            band: 8,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Permutation alignment test for EXP. The alignment cost of the text against
/// the true key sequence is ranked among costs under freshly keyed decoy
/// sequences; the p-value is that rank.
pub fn exp_alignment_test(
    text: &TokenSequence,
    key: WatermarkKey,
    key_length: usize,
    vocab_size: usize,
    num_permutations: usize,
    rng_seed: u64,
    params: AlignmentParams,
) -> Result<DetectionResult> {
    if text.is_empty() {
        return Err(Error::InsufficientText { needed: 1, got: 0 });
    }
    if num_permutations < 20 {
        return Err(Error::InvalidParameter(
            "permutation test needs at least 20 decoys".into(),
        ));
    }
    let xi = ExpKeySequence::new(key, key_length, vocab_size)?;
    let lambda = match params.edit_penalty {
        Some(l) => l,
        None => calibrate_edit_penalty(&xi),
    };
    let true_cost = alignment_cost(&text.ids, &xi, lambda, params.band);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut at_or_below = 0usize;
    for _ in 0..num_permutations {
        let decoy = ExpKeySequence::new(WatermarkKey(rng.gen()), key_length, vocab_size)?;
        if alignment_cost(&text.ids, &decoy, lambda, params.band) <= true_cost {
            at_or_below += 1;
        }
    }
    let p_value = (at_or_below + 1) as Scalar / (num_permutations + 1) as Scalar;
    Ok(DetectionResult {
        statistic: true_cost,
        p_value,
        threshold: params.alpha,
        is_watermarked: p_value <= params.alpha,
        tokens_scored: text.len(),
    })
}

/// Cheap z-style alignment statistic for feature extraction: how far the
/// text's alignment cost falls below its expectation under key-independent
/// text, in units of sqrt(length). Positive and large when the text follows
/// the key sequence. No permutation test is run.
pub fn exp_alignment_statistic(
    text: &TokenSequence,
    key: WatermarkKey,
    key_length: usize,
    vocab_size: usize,
    params: AlignmentParams,
) -> Result<Scalar> {
    if text.is_empty() {
        return Err(Error::InsufficientText { needed: 1, got: 0 });
    }
    let xi = ExpKeySequence::new(key, key_length, vocab_size)?;
    let lambda = match params.edit_penalty {
        Some(l) => l,
        None => calibrate_edit_penalty(&xi),
    };
    let cost = alignment_cost(&text.ids, &xi, lambda, params.band);
    let t = text.len() as Scalar;
    Ok((lambda * t - cost) / t.sqrt())
}

/// Mean per-token cost −ln(xi) of key-independent text, estimated from a
/// fixed deterministic probe of the key sequence.
fn calibrate_edit_penalty(xi: &ExpKeySequence) -> Scalar {
    let mut sum = 0.0;
    let mut n = 0usize;
    for row in 0..xi.rows().min(64) {
        for tok in 0..xi.vocab_size().min(64) as u32 {
            sum += -xi.xi(row, tok).ln();
            n += 1;
        }
    }
    sum / n as Scalar
}

/// Banded edit-tolerant alignment: text position i may align to key position
/// j with |i - j| <= band; insertions and deletions cost `lambda` each.
fn alignment_cost(ids: &[u32], xi: &ExpKeySequence, lambda: Scalar, band: usize) -> Scalar {
    let t = ids.len();
    let b = band.min(t);
    let width = 2 * b + 1;
    let inf = Scalar::INFINITY;
    // prev[d] = cost at (i-1, j) with j = (i-1) + d - b.
    let mut prev = vec![inf; width];
    let mut cur = vec![inf; width];
    // Row i = 0: only insertions of key positions.
    for d in 0..width {
        let j = d as isize - b as isize;
        if j >= 0 {
            prev[d] = j as Scalar * lambda;
        }
    }
    for i in 1..=t {
        for d in 0..width {
            cur[d] = inf;
            let j = i as isize + d as isize - b as isize;
            if j < 0 || j as usize > t + b {
                continue;
            }
            let j = j as usize;
            // Diagonal: consume token i-1 against key position j-1.
            if j >= 1 && prev[d] < inf {
                let c = -xi.xi(xi.row_for_position(j - 1), ids[i - 1]).ln();
                cur[d] = prev[d] + c;
            }
            // Deletion of text token (move in i only): (i-1, j) -> (i, j).
            if d + 1 < width && prev[d + 1] < inf {
                cur[d] = cur[d].min(prev[d + 1] + lambda);
            }
            // Insertion of key position (move in j only): (i, j-1) -> (i, j).
            if d >= 1 && cur[d - 1] < inf {
                cur[d] = cur[d].min(cur[d - 1] + lambda);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    // Best terminal cell, charging remaining key offset as edits.
    let mut best = inf;
    for d in 0..width {
        let j = t as isize + d as isize - b as isize;
        if j >= 0 && prev[d] < inf {
            let tail = (t as isize - j).unsigned_abs() as Scalar * lambda;
            best = best.min(prev[d] + tail);
        }
    }
    best
}

/// Aggregate per-output verdicts into a model-level decision.
pub fn flag_model(
    results: &[DetectionResult],
    flag_rate_threshold: Scalar,
) -> Result<ModelVerdict> {
    if results.is_empty() {
        return Err(Error::InvalidInput(
            "model-level flagging needs at least one detection result".into(),
        ));
    }
    let flagged = results.iter().filter(|r| r.is_watermarked).count();
    let rate = flagged as Scalar / results.len() as Scalar;
    Ok(ModelVerdict {
        outputs_tested: results.len(),
        outputs_flagged: flagged,
        flag_rate: rate,
        model_flagged: rate >= flag_rate_threshold,
        flag_rate_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::NGramModel;
    use crate::watermark::watermarked_generate;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_text_model(vocab_words: usize, seed: u64) -> NGramModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..vocab_words).map(|i| format!("w{i}")).collect();
        let text: Vec<&str> = (0..20_000)
            .map(|_| words[rng.gen_range(0..vocab_words)].as_str())
            .collect();
        NGramModel::train_text(&text.join(" "), 2, 0.05, "rnd", 5000).unwrap()
    }

    fn kgw() -> SchemeConfig {
        SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(0xabcdef))
    }

    #[test]
    fn null_expectation_gives_zero_z() {
        // Construct a text where hits equal gamma * T exactly by brute force:
        // use gamma = 0.5 over a small vocab and count hits manually.
        let scheme = SchemeConfig {
            gamma: 0.5,
            ..SchemeConfig::new(SchemeKind::Unigram, WatermarkKey(7))
        };
        let mut cfg = scheme;
        cfg.context_width = 0;
        let vocab_size = 10usize;
        let part = crate::watermark::unigram_partition(cfg.key, 0.5, vocab_size).unwrap();
        let mut ids = Vec::new();
        // 5 green then 5 red tokens: hits = T/2 = gamma*T.
        ids.extend(part.green_ids().into_iter().take(5));
        ids.extend((0..vocab_size as u32).filter(|&v| !part.is_green(v)).take(5));
        let text = TokenSequence::external(ids);
        let r = green_fraction_test(&text, &cfg, None, vocab_size, 4.0).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert!(!r.is_watermarked);
    }

    #[test]
    fn z_formula_hand_value() {
        // gamma=0.5, T=100, g=100 -> z = (100-50)/sqrt(25) = 10.
        let vocab_size = 10usize;
        let cfg = SchemeConfig {
            gamma: 0.5,
            ..SchemeConfig::new(SchemeKind::Unigram, WatermarkKey(7))
        };
        let part = crate::watermark::unigram_partition(cfg.key, 0.5, vocab_size).unwrap();
        let green = part.green_ids();
        let ids: Vec<u32> = (0..100).map(|i| green[i % green.len()]).collect();
        let r = green_fraction_test(
            &TokenSequence::external(ids),
            &cfg,
            None,
            vocab_size,
            4.0,
        )
        .unwrap();
        assert_abs_diff_eq!(r.statistic, 10.0, epsilon = 1e-12);
        assert!(r.is_watermarked);
    }

    #[test]
    fn short_text_is_rejected() {
        let cfg = kgw();
        let text = TokenSequence::external(vec![3]);
        assert!(matches!(
            green_fraction_test(&text, &cfg, None, 10, 4.0),
            Err(Error::InsufficientText { .. })
        ));
    }

    #[test]
    fn detector_matches_generation_partitions() {
        // Round trip: instrument generation by recomputing its partitions and
        // comparing hit counts against the detector's.
        let m = random_text_model(100, 9);
        let scheme = kgw();
        let prompt = TokenSequence::external(vec![2, 3]);
        let text = watermarked_generate(&m, &prompt, &scheme, 150, 4, None).unwrap();
        let mut cache = PartitionCache::new(scheme.key, scheme.gamma, m.vocab_size());
        let mut hits = 0usize;
        for i in 1..text.ids.len() {
            if cache
                .partition(&text.ids[i - 1..i])
                .unwrap()
                .is_green(text.ids[i])
            {
                hits += 1;
            }
        }
        let r =
            green_fraction_test(&text, &scheme, None, m.vocab_size(), 4.0).unwrap();
        let z = binomial_z(hits as f64, (text.len() - 1) as f64, scheme.gamma);
        assert_abs_diff_eq!(r.statistic, z, epsilon = 1e-12);
    }

    #[test]
    fn watermarked_text_is_detected_and_clean_is_not() {
        let m = random_text_model(200, 10);
        let scheme = kgw();
        let prompt = TokenSequence::external(vec![2]);
        let wm = watermarked_generate(&m, &prompt, &scheme, 200, 1, None).unwrap();
        let clean = m.generate(&prompt, 200, crate::lm::Sampler::Multinomial, 1);
        let r_wm =
            green_fraction_test(&wm, &scheme, None, m.vocab_size(), 4.0).unwrap();
        let r_clean =
            green_fraction_test(&clean, &scheme, None, m.vocab_size(), 4.0).unwrap();
        assert!(r_wm.is_watermarked, "z = {}", r_wm.statistic);
        assert!(!r_clean.is_watermarked, "z = {}", r_clean.statistic);
    }

    #[test]
    fn sirlite_detection_round_trip() {
        let m = random_text_model(200, 11);
        let table = SynonymTable::frequency_buckets(m.vocab_size(), 4).unwrap();
        let mut scheme = SchemeConfig::new(SchemeKind::SirLite, WatermarkKey(0x51));
        scheme.delta = 2.0;
        let prompt = TokenSequence::external(vec![2]);
        let wm = watermarked_generate(&m, &prompt, &scheme, 200, 2, Some(&table)).unwrap();
        let r = green_fraction_test(&wm, &scheme, Some(&table), m.vocab_size(), 4.0).unwrap();
        assert!(r.is_watermarked, "z = {}", r.statistic);
        let clean = m.generate(&prompt, 200, crate::lm::Sampler::Multinomial, 2);
        let r = green_fraction_test(&clean, &scheme, Some(&table), m.vocab_size(), 4.0).unwrap();
        assert!(!r.is_watermarked, "z = {}", r.statistic);
    }

    #[test]
    fn exp_generated_text_reaches_permutation_floor() {
        let m = random_text_model(100, 12);
        let scheme = SchemeConfig::new(SchemeKind::Exp, WatermarkKey(0xe0));
        let prompt = TokenSequence::external(vec![2]);
        let text = watermarked_generate(&m, &prompt, &scheme, 100, 0, None).unwrap();
        let r = exp_alignment_test(
            &text,
            scheme.key,
            scheme.exp_key_length,
            m.vocab_size(),
            100,
            7,
            AlignmentParams::default(),
        )
        .unwrap();
        assert!(r.p_value <= 1.0 / 101.0 + 1e-12, "p = {}", r.p_value);
        assert!(r.is_watermarked);
    }

    #[test]
    fn exp_test_survives_moderate_substitution() {
        let m = random_text_model(100, 13);
        let scheme = SchemeConfig::new(SchemeKind::Exp, WatermarkKey(0xe1));
        let prompt = TokenSequence::external(vec![2]);
        let mut flagged = 0usize;
        let trials = 30;
        for seed in 0..trials {
            let mut text = watermarked_generate(&m, &prompt, &scheme, 200, seed, None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            for i in 0..text.ids.len() {
                if rng.gen::<f64>() < 0.10 {
                    text.ids[i] = rng.gen_range(2..m.vocab_size() as u32);
                }
            }
            let r = exp_alignment_test(
                &text,
                scheme.key,
                scheme.exp_key_length,
                m.vocab_size(),
                100,
                seed,
                AlignmentParams::default(),
            )
            .unwrap();
            if r.is_watermarked {
                flagged += 1;
            }
        }
        assert!(
            flagged as f64 / trials as f64 >= 0.9,
            "flagged {flagged}/{trials}"
        );
    }

    #[test]
    fn exp_test_controls_false_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vocab = 100usize;
        let mut flagged = 0usize;
        let trials = 100;
        for seed in 0..trials {
            let ids: Vec<u32> = (0..150).map(|_| rng.gen_range(2..vocab as u32)).collect();
            let r = exp_alignment_test(
                &TokenSequence::external(ids),
                WatermarkKey(0xe2),
                256,
                vocab,
                100,
                seed,
                AlignmentParams::default(),
            )
            .unwrap();
            if r.is_watermarked {
                flagged += 1;
            }
        }
        assert!(flagged <= 3, "false positives {flagged}/{trials}");
    }

    #[test]
    fn exp_rejects_bad_parameters() {
        let text = TokenSequence::external(vec![2, 3]);
        assert!(exp_alignment_test(
            &text,
            WatermarkKey(1),
            256,
            10,
            10,
            0,
            AlignmentParams::default()
        )
        .is_err());
        assert!(exp_alignment_test(
            &TokenSequence::external(vec![]),
            WatermarkKey(1),
            256,
            10,
            100,
            0,
            AlignmentParams::default()
        )
        .is_err());
    }

    fn fake_result(flagged: bool) -> DetectionResult {
        DetectionResult {
            statistic: 0.0,
            p_value: 0.5,
            threshold: 4.0,
            is_watermarked: flagged,
            tokens_scored: 10,
        }
    }

    #[test]
    fn flag_model_rules() {
        let all: Vec<_> = (0..10).map(|_| fake_result(true)).collect();
        let v = flag_model(&all, 0.5).unwrap();
        assert!(v.model_flagged);
        assert_abs_diff_eq!(v.flag_rate, 1.0, epsilon = 1e-12);

        let none: Vec<_> = (0..10).map(|_| fake_result(false)).collect();
        let v = flag_model(&none, 0.5).unwrap();
        assert!(!v.model_flagged);
        assert_abs_diff_eq!(v.flag_rate, 0.0, epsilon = 1e-12);

        let mut mixed: Vec<_> = (0..30).map(|_| fake_result(true)).collect();
        mixed.extend((0..70).map(|_| fake_result(false)));
        let v = flag_model(&mixed, 0.25).unwrap();
        assert!(v.model_flagged);
        assert_abs_diff_eq!(v.flag_rate, 0.3, epsilon = 1e-12);

        assert!(flag_model(&[], 0.5).is_err());
    }
}
