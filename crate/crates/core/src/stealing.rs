//! Model stealing by distillation and the radioactivity check: a surrogate
//! n-gram model is trained on a victim's (possibly watermarked) completions,
//! then probed to see whether its own generations still carry the watermark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    exp_alignment_test, flag_model, green_fraction_test, AlignmentParams, DetectionResult,
    ModelVerdict, DEFAULT_PERMUTATIONS, DEFAULT_Z_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::lm::{NGramModel, Sampler, TokenSequence};
use crate::prf::mix2;
use crate::synonyms::SynonymTable;
use crate::watermark::{watermarked_generate, SchemeConfig, SchemeKind};
use crate::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StealingConfig {
    /// Number of victim queries N.
    pub num_queries: usize,
    /// Completion length per query.
    pub completion_len: usize,
    pub surrogate_order: usize,
    pub surrogate_smoothing: Scalar,
    /// When set, the victim answers with watermarked generations.
    pub victim_scheme: Option<SchemeConfig>,
}

impl StealingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(Error::InvalidParameter("num_queries must be >= 1".into()));
        }
        if self.completion_len == 0 {
            return Err(Error::InvalidParameter("completion_len must be >= 1".into()));
        }
        if let Some(s) = &self.victim_scheme {
            s.validate()?;
        }
        Ok(())
    }
}

/// The adversary's view: N completions from the victim, one per prompt.
pub fn query_corpus(
    victim: &NGramModel,
    cfg: &StealingConfig,
    prompts: &[TokenSequence],
    table: Option<&SynonymTable>,
    rng_seed: u64,
) -> Result<Vec<TokenSequence>> {
    cfg.validate()?;
    if cfg.num_queries > prompts.len() {
        return Err(Error::InsufficientPrompts {
            requested: cfg.num_queries,
            available: prompts.len(),
        });
    }
    (0..cfg.num_queries)
        .into_par_iter()
        .map(|i| {
            let seed = mix2(rng_seed, i as u64);
            match &cfg.victim_scheme {
                Some(scheme) => watermarked_generate(
                    victim,
                    &prompts[i],
                    scheme,
                    cfg.completion_len,
                    seed,
                    table,
                ),
                None => Ok(victim.generate(
                    &prompts[i],
                    cfg.completion_len,
                    Sampler::Multinomial,
                    seed,
                )),
            }
        })
        .collect()
}

/// Distills a surrogate from the victim's completions. The surrogate shares
/// the victim's vocabulary; only the counts are the adversary's.
pub fn steal(
    victim: &NGramModel,
    cfg: &StealingConfig,
    prompts: &[TokenSequence],
    table: Option<&SynonymTable>,
    rng_seed: u64,
) -> Result<NGramModel> {
    let completions = query_corpus(victim, cfg, prompts, table, rng_seed)?;
    let corpus: Vec<u32> = completions.into_iter().flat_map(|c| c.ids).collect();
    NGramModel::train(
        &corpus,
        cfg.surrogate_order,
        cfg.surrogate_smoothing,
        &format!("{}-surrogate", victim.model_id()),
        victim.vocab().clone(),
    )
}

/// Generates plain (unwatermarked) probe completions from the surrogate and
/// runs the matching detector on each; the verdict aggregates per-probe flags.
pub fn radioactivity_check(
    surrogate: &NGramModel,
    scheme: &SchemeConfig,
    table: Option<&SynonymTable>,
    num_probe_generations: usize,
    probe_len: usize,
    flag_rate_threshold: Scalar,
    rng_seed: u64,
) -> Result<ModelVerdict> {
    if num_probe_generations < 10 {
        return Err(Error::InvalidParameter(
            "radioactivity check needs at least 10 probes".into(),
        ));
    }
    scheme.validate()?;
    let empty = TokenSequence::external(vec![]);
    let results: Vec<DetectionResult> = (0..num_probe_generations)
        .into_par_iter()
        .map(|i| {
            let seed = mix2(rng_seed ^ 0x70b3, i as u64);
            let probe = surrogate.generate(&empty, probe_len, Sampler::Multinomial, seed);
            match scheme.kind {
                SchemeKind::Exp => exp_alignment_test(
                    &probe,
                    scheme.key,
                    scheme.exp_key_length,
                    surrogate.vocab_size(),
                    DEFAULT_PERMUTATIONS,
                    seed,
                    AlignmentParams::default(),
                ),
                _ => green_fraction_test(
                    &probe,
                    scheme,
                    table,
                    surrogate.vocab_size(),
                    DEFAULT_Z_THRESHOLD,
                ),
            }
        })
        .collect::<Result<_>>()?;
    flag_model(&results, flag_rate_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::watermark::{PartitionCache, SchemeKind, WatermarkKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn victim(vocab_words: usize, seed: u64) -> NGramModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..vocab_words).map(|i| format!("w{i}")).collect();
        let text: Vec<&str> = (0..30_000)
            .map(|_| words[rng.gen_range(0..vocab_words)].as_str())
            .collect();
        NGramModel::train_text(&text.join(" "), 2, 0.05, "victim", 5000).unwrap()
    }

    fn prompt_pool(m: &NGramModel, n: usize) -> Vec<TokenSequence> {
        (0..n as u64)
            .map(|s| {
                m.generate(
                    &TokenSequence::external(vec![2]),
                    8,
                    Sampler::Multinomial,
                    5000 + s,
                )
            })
            .collect()
    }

    fn cfg(n: usize, scheme: Option<SchemeConfig>) -> StealingConfig {
        StealingConfig {
            num_queries: n,
            completion_len: 200,
            surrogate_order: 2,
            surrogate_smoothing: 0.05,
            victim_scheme: scheme,
        }
    }

    #[test]
    fn too_few_prompts_is_an_error() {
        let v = victim(50, 1);
        let prompts = prompt_pool(&v, 5);
        assert!(matches!(
            steal(&v, &cfg(6, None), &prompts, None, 0),
            Err(Error::InsufficientPrompts {
                requested: 6,
                available: 5
            })
        ));
    }

    #[test]
    fn distillation_approaches_victim_perplexity() {
        let v = victim(100, 2);
        let prompts = prompt_pool(&v, 500);
        let s = steal(&v, &cfg(500, None), &prompts, None, 1).unwrap();
        // Held-out victim generations.
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let held = v.generate(
                &TokenSequence::external(vec![2]),
                200,
                Sampler::Multinomial,
                9000 + seed,
            );
            ratios.push(s.perplexity(&held).unwrap() / v.perplexity(&held).unwrap());
        }
        let mean = crate::num::mean(&ratios);
        assert!(mean <= 1.5, "surrogate/victim perplexity ratio {mean}");
    }

    #[test]
    fn single_query_surrogate_is_uniform_beyond_its_corpus() {
        let v = victim(100, 3);
        let prompts = prompt_pool(&v, 1);
        let mut c = cfg(1, None);
        c.completion_len = 30;
        let s = steal(&v, &c, &prompts, None, 2).unwrap();
        // Tokens the tiny corpus never produced share one smoothed
        // probability, under any context.
        let dist = s.next_token_distribution(&[97, 98]);
        let corpus_tokens: std::collections::HashSet<u32> =
            query_corpus(&v, &c, &prompts, None, 2).unwrap()[0]
                .ids
                .iter()
                .copied()
                .collect();
        let unseen: Vec<Scalar> = (0..s.vocab_size() as u32)
            .filter(|t| !corpus_tokens.contains(t))
            .map(|t| dist[t as usize])
            .collect();
        assert!(unseen.len() > 50);
        let first = unseen[0];
        assert!(unseen.iter().all(|&p| (p - first).abs() < 1e-15));
    }

    #[test]
    fn watermarked_queries_have_green_majorities() {
        let v = victim(150, 4);
        let prompts = prompt_pool(&v, 50);
        let mut scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(0x5111));
        scheme.delta = 4.0;
        let c = cfg(50, Some(scheme));
        let completions = query_corpus(&v, &c, &prompts, None, 3).unwrap();
        let mut green = 0usize;
        let mut total = 0usize;
        let mut cache = PartitionCache::new(scheme.key, scheme.gamma, v.vocab_size());
        for text in &completions {
            for i in 1..text.ids.len() {
                if cache
                    .partition(&text.ids[i - 1..i])
                    .unwrap()
                    .is_green(text.ids[i])
                {
                    green += 1;
                }
                total += 1;
            }
        }
        let frac = green as f64 / total as f64;
        assert!(frac >= 0.5, "green fraction {frac}");
    }

    #[test]
    fn probe_count_below_ten_is_rejected() {
        let v = victim(50, 5);
        let scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(1));
        assert!(radioactivity_check(&v, &scheme, None, 9, 100, 0.25, 0).is_err());
        assert!(radioactivity_check(&v, &scheme, None, 0, 100, 0.25, 0).is_err());
    }

    #[test]
    fn clean_surrogate_is_not_flagged() {
        let v = victim(150, 6);
        let prompts = prompt_pool(&v, 100);
        let scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(0x5222));
        let mut clear = 0usize;
        let trials = 20;
        for seed in 0..trials {
            let s = steal(&v, &cfg(100, None), &prompts, None, seed).unwrap();
            let verdict =
                radioactivity_check(&s, &scheme, None, 10, 200, 0.25, seed).unwrap();
            if !verdict.model_flagged {
                clear += 1;
            }
        }
        assert!(clear >= 19, "unflagged {clear}/{trials}");
    }

    #[test]
    fn watermarked_distillation_leaks_more_than_clean() {
        let v = victim(150, 7);
        let prompts = prompt_pool(&v, 100);
        let mut scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(0x5333));
        scheme.delta = 4.0;
        let mut wins = 0usize;
        let pairs = 10;
        for seed in 0..pairs {
            let clean = steal(&v, &cfg(100, None), &prompts, None, seed).unwrap();
            let marked =
                steal(&v, &cfg(100, Some(scheme)), &prompts, None, seed).unwrap();
            let r_clean =
                radioactivity_check(&clean, &scheme, None, 20, 200, 0.25, seed).unwrap();
            let r_marked =
                radioactivity_check(&marked, &scheme, None, 20, 200, 0.25, seed).unwrap();
            if r_marked.flag_rate > r_clean.flag_rate {
                wins += 1;
            }
        }
        assert!(wins >= 8, "wins {wins}/{pairs}");
    }
}
