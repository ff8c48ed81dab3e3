use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lm::{NGramModel, TokenSequence};
use crate::num::softmax_in_place;
use crate::prf::mix64;
use crate::synonyms::SynonymTable;
use crate::watermark::{
    exp_sample, sirlite_token_sign, ExpKeySequence, PartitionCache, SchemeConfig, SchemeKind,
};

/// Watermarked autoregressive generation. Returns the completion only.
///
/// Logit-family schemes bias the model's logits and sample with temperature-1
/// multinomial; EXP intervenes in sampling via its key sequence. SIR-lite
/// signs are seeded by the synonym classes of the tokens generated so far,
/// never by the prompt, so a key holder can re-derive them from the
/// completion alone.
pub fn watermarked_generate(
    model: &NGramModel,
    prompt: &TokenSequence,
    scheme: &SchemeConfig,
    length: usize,
    rng_seed: u64,
    table: Option<&SynonymTable>,
) -> Result<TokenSequence> {
    scheme.validate()?;
    let vocab_size = model.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut context: Vec<u32> = prompt.ids.clone();
    let prompt_len = context.len();
    let mut out = Vec::with_capacity(length);

    match scheme.kind {
        SchemeKind::Kgw | SchemeKind::Unigram => {
            let h = scheme.context_width;
            let mut cache = PartitionCache::new(scheme.key, scheme.gamma, vocab_size);
            for _ in 0..length {
                let window = seed_window(&context, h);
                let partition = cache.partition(&window)?;
                let probs = model.next_token_distribution(&context);
                let mut logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
                for (v, logit) in logits.iter_mut().enumerate() {
                    if partition.is_green(v as u32) {
                        *logit += scheme.delta;
                    }
                }
                softmax_in_place(&mut logits);
                let next = crate::lm::sample_multinomial(&logits, &mut rng);
                out.push(next);
                context.push(next);
            }
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
            // Order-free incremental hash over the completion's classes.
            let mut ctx_hash = 0u64;
            for _ in 0..length {
                let probs = model.next_token_distribution(&context);
                let mut logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
                for (v, logit) in logits.iter_mut().enumerate() {
                    if sirlite_token_sign(scheme.key, ctx_hash, table.class_of(v as u32)) {
                        *logit += scheme.delta;
                    } else {
                        *logit -= scheme.delta;
                    }
                }
                softmax_in_place(&mut logits);
                let next = crate::lm::sample_multinomial(&logits, &mut rng);
                ctx_hash = ctx_hash.wrapping_add(mix64(table.class_of(next) as u64 + 1));
                out.push(next);
                context.push(next);
            }
        }
        SchemeKind::Exp => {
            let xi = ExpKeySequence::new(scheme.key, scheme.exp_key_length, vocab_size)?;
            let shift = if scheme.exp_random_shift {
                rng.gen_range(0..scheme.exp_key_length)
            } else {
                0
            };
            for i in 0..length {
                let probs = model.next_token_distribution(&context);
                let row = xi.row_for_position(i + shift);
                let next = exp_sample(&probs, &xi.row_vector(row))?;
                out.push(next);
                context.push(next);
            }
        }
    }
    debug_assert_eq!(context.len(), prompt_len + out.len());
    Ok(TokenSequence::new(out, model.model_id().to_string()))
}

/// Last `h` ids of the running context (prompt included), front-padded with
/// BOS when the context is shorter than `h`.
fn seed_window(context: &[u32], h: usize) -> Vec<u32> {
    let mut window = vec![crate::lm::BOS_ID; h.saturating_sub(context.len())];
    let start = context.len().saturating_sub(h);
    window.extend_from_slice(&context[start..]);
    window
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::Sampler;
    use crate::watermark::WatermarkKey;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_text_model(vocab_words: usize, seed: u64) -> NGramModel {
        // A corpus of random tokens: high-entropy contexts, which watermark
        // strength tests rely on.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..vocab_words).map(|i| format!("w{i}")).collect();
        let text: Vec<&str> = (0..20_000)
            .map(|_| words[rng.gen_range(0..vocab_words)].as_str())
            .collect();
        NGramModel::train_text(&text.join(" "), 2, 0.05, "rnd", 5000).unwrap()
    }

    fn green_fraction(model: &NGramModel, scheme: &SchemeConfig, text: &TokenSequence) -> f64 {
        let mut cache = PartitionCache::new(scheme.key, scheme.gamma, model.vocab_size());
        let h = scheme.detection_skip();
        let mut hits = 0usize;
        for i in h..text.ids.len() {
            let window = &text.ids[i - h..i];
            if cache.partition(window).unwrap().is_green(text.ids[i]) {
                hits += 1;
            }
        }
        hits as f64 / (text.ids.len() - h) as f64
    }

    #[test]
    fn zero_bias_matches_plain_generation() {
        let m = random_text_model(50, 1);
        let mut scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(9));
        scheme.delta = 0.0;
        let prompt = TokenSequence::external(vec![2, 3]);
        let wm = watermarked_generate(&m, &prompt, &scheme, 200, 77, None).unwrap();
        let plain = m.generate(&prompt, 200, Sampler::Multinomial, 77);
        assert_eq!(wm.ids, plain.ids);
    }

    #[test]
    fn generation_is_deterministic() {
        let m = random_text_model(50, 2);
        let prompt = TokenSequence::external(vec![4]);
        for kind in [SchemeKind::Kgw, SchemeKind::Unigram, SchemeKind::SirLite, SchemeKind::Exp] {
            let scheme = SchemeConfig::new(kind, WatermarkKey(123));
            let a = watermarked_generate(&m, &prompt, &scheme, 64, 5, None).unwrap();
            let b = watermarked_generate(&m, &prompt, &scheme, 64, 5, None).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn strong_bias_pushes_green_fraction_past_half() {
        let m = random_text_model(200, 3);
        let mut scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(31337));
        scheme.gamma = 0.25;
        scheme.delta = 4.0;
        let prompt = TokenSequence::external(vec![2]);
        let mut fractions = Vec::new();
        for seed in 0..50 {
            let text = watermarked_generate(&m, &prompt, &scheme, 200, seed, None).unwrap();
            fractions.push(green_fraction(&m, &scheme, &text));
        }
        let mean = crate::num::mean(&fractions);
        assert!(mean >= 0.5, "mean green fraction {mean}");
    }

    #[test]
    fn green_fraction_is_monotone_in_delta() {
        let m = random_text_model(200, 4);
        let prompt = TokenSequence::external(vec![2]);
        let mut means = Vec::new();
        for delta in [0.0, 1.0, 2.0, 4.0, 8.0] {
            let mut scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(8));
            scheme.delta = delta;
            let fr: Vec<f64> = (0..50)
                .map(|seed| {
                    let text = watermarked_generate(&m, &prompt, &scheme, 200, seed, None).unwrap();
                    green_fraction(&m, &scheme, &text)
                })
                .collect();
            means.push(crate::num::mean(&fr));
        }
        for w in means.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "means not monotone: {means:?}");
        }
    }

    #[test]
    fn length_zero_yields_empty_completion() {
        let m = random_text_model(20, 5);
        let scheme = SchemeConfig::new(SchemeKind::Exp, WatermarkKey(1));
        let out =
            watermarked_generate(&m, &TokenSequence::external(vec![2]), &scheme, 0, 0, None)
                .unwrap();
        assert!(out.is_empty());
    }
}
