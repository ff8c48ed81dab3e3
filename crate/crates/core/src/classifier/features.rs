//! Feature extraction for source attribution. The layout is fixed by the
//! registry: token-frequency histogram, per-model log perplexity, per-scheme
//! detection statistics, per-model mean token rank.

use rayon::prelude::*;

use crate::detector::{exp_alignment_statistic, green_fraction_test, AlignmentParams};
use crate::error::{Error, Result};
use crate::lm::{NGramModel, TokenSequence};
use crate::synonyms::SynonymTable;
use crate::watermark::{SchemeConfig, SchemeKind};
use crate::Scalar;

/// Histogram width cap. Token ids are frequency-ranked, so the first
/// `HISTOGRAM_CAP` ids are the most frequent tokens.
pub const HISTOGRAM_CAP: usize = 512;

pub type FeatureVector = Vec<Scalar>;

/// Everything feature extraction may consult: candidate models, named scheme
/// configurations (detection keys included, the extractor is run by the key
/// owner), and the synonym table shared with SIR-lite.
pub struct FeatureRegistry<'a> {
    models: &'a [NGramModel],
    schemes: Vec<(String, SchemeConfig)>,
    table: Option<&'a SynonymTable>,
    histogram_dim: usize,
    /// Disabled for key-free ablations.
    include_scheme_features: bool,
}

impl<'a> FeatureRegistry<'a> {
    pub fn new(
        models: &'a [NGramModel],
        schemes: Vec<(String, SchemeConfig)>,
        table: Option<&'a SynonymTable>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter(
                "feature registry needs at least one model".into(),
            ));
        }
        let v = models[0].vocab_size();
        if models.iter().any(|m| m.vocab_size() != v) {
            return Err(Error::InvalidParameter(
                "registry models must share one vocabulary".into(),
            ));
        }
        for (name, s) in &schemes {
            s.validate().map_err(|e| {
                Error::InvalidParameter(format!("scheme {name}: {e}"))
            })?;
        }
        Ok(Self {
            models,
            schemes,
            table,
            histogram_dim: HISTOGRAM_CAP.min(v),
            include_scheme_features: true,
        })
    }

    pub fn without_scheme_features(mut self) -> Self {
        self.include_scheme_features = false;
        self
    }

    pub fn models(&self) -> &[NGramModel] {
        self.models
    }

    pub fn vocab_size(&self) -> usize {
        self.models[0].vocab_size()
    }

    pub fn dim(&self) -> usize {
        self.histogram_dim
            + self.models.len()
            + if self.include_scheme_features { self.schemes.len() } else { 0 }
            + self.models.len()
    }

    /// Feature names in vector order, recorded in report headers.
    pub fn layout(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for i in 0..self.histogram_dim {
            names.push(format!("hist:{i}"));
        }
        for m in self.models {
            names.push(format!("log_ppl:{}", m.model_id()));
        }
        if self.include_scheme_features {
            for (name, _) in &self.schemes {
                names.push(format!("z:{name}"));
            }
        }
        for m in self.models {
            names.push(format!("mean_rank:{}", m.model_id()));
        }
        names
    }

    /// Index of the log-perplexity feature for model `i` (test hook).
    pub fn ppl_feature_index(&self, i: usize) -> usize {
        self.histogram_dim + i
    }

    /// Index of the detection-statistic feature for scheme `i` (test hook).
    pub fn z_feature_index(&self, i: usize) -> usize {
        assert!(self.include_scheme_features);
        self.histogram_dim + self.models.len() + i
    }
}

pub fn extract_features(text: &TokenSequence, reg: &FeatureRegistry) -> Result<FeatureVector> {
    if text.len() < 2 {
        return Err(Error::InvalidInput(
            "feature extraction needs at least 2 tokens".into(),
        ));
    }
    let mut out = Vec::with_capacity(reg.dim());

    let norm = 1.0 / text.len() as Scalar;
    let mut hist = vec![0.0; reg.histogram_dim];
    for &id in &text.ids {
        if (id as usize) < reg.histogram_dim {
            hist[id as usize] += norm;
        }
    }
    out.extend(hist);

    for m in reg.models {
        out.push(m.perplexity(text)?.ln());
    }

    if reg.include_scheme_features {
        for (_, scheme) in &reg.schemes {
            let z = match scheme.kind {
                SchemeKind::Exp => exp_alignment_statistic(
                    text,
                    scheme.key,
                    scheme.exp_key_length,
                    reg.vocab_size(),
                    AlignmentParams::default(),
                )?,
                _ => {
                    green_fraction_test(text, scheme, reg.table, reg.vocab_size(), 4.0)?
                        .statistic
                }
            };
            out.push(z);
        }
    }

    for m in reg.models {
        let mut sum = 0.0;
        for i in 0..text.ids.len() {
            let start = i.saturating_sub(m.order() - 1);
            sum += m.token_rank(&text.ids[start..i], text.ids[i]) as Scalar;
        }
        out.push(sum / text.len() as Scalar);
    }

    debug_assert_eq!(out.len(), reg.dim());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(out)
}

/// Batch extraction, parallel over texts, output order preserved.
pub fn extract_features_batch(
    texts: &[TokenSequence],
    reg: &FeatureRegistry,
) -> Result<Vec<FeatureVector>> {
    texts.par_iter().map(|t| extract_features(t, reg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::watermark::{watermarked_generate, WatermarkKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Two models over one shared vocabulary with visibly different bigram
    /// statistics: model 0 prefers the successor id+1, model 1 prefers id+2.
    fn skewed_pair(vocab_words: usize) -> Vec<NGramModel> {
        let words: Vec<String> = (0..vocab_words).map(|i| format!("w{i:03}")).collect();
        let vocab = Arc::new(crate::lm::Vocabulary::from_ranked_tokens(words));
        let v = vocab.len() as u32;
        let mk = |step: u32, noise_seed: u64, id: &str| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let mut ids = Vec::with_capacity(30_000);
            let mut cur = 2u32;
            for _ in 0..30_000 {
                ids.push(cur);
                cur = if rng.gen::<f64>() < 0.8 {
                    2 + (cur - 2 + step) % (v - 2)
                } else {
                    rng.gen_range(2..v)
                };
            }
            NGramModel::train(&ids, 2, 0.05, id, vocab.clone()).unwrap()
        };
        vec![mk(1, 1, "m0"), mk(2, 2, "m1")]
    }

    #[test]
    fn same_text_same_vector() {
        let models = skewed_pair(50);
        let reg = FeatureRegistry::new(&models, vec![], None).unwrap();
        let text = models[0].generate(
            &TokenSequence::external(vec![2]),
            100,
            crate::lm::Sampler::Multinomial,
            0,
        );
        assert_eq!(
            extract_features(&text, &reg).unwrap(),
            extract_features(&text, &reg).unwrap()
        );
        assert_eq!(reg.dim(), reg.layout().len());
    }

    #[test]
    fn short_text_is_rejected() {
        let models = skewed_pair(50);
        let reg = FeatureRegistry::new(&models, vec![], None).unwrap();
        assert!(extract_features(&TokenSequence::external(vec![2]), &reg).is_err());
        assert!(extract_features(&TokenSequence::external(vec![]), &reg).is_err());
    }

    #[test]
    fn own_model_perplexity_is_minimal_most_of_the_time() {
        let models = skewed_pair(50);
        let reg = FeatureRegistry::new(&models, vec![], None).unwrap();
        let prompt = TokenSequence::external(vec![2]);
        let mut wins = 0usize;
        let trials = 200;
        for seed in 0..trials as u64 {
            let gen_by = (seed % 2) as usize;
            let text = models[gen_by].generate(
                &prompt,
                100,
                crate::lm::Sampler::Multinomial,
                seed,
            );
            let f = extract_features(&text, &reg).unwrap();
            let own = f[reg.ppl_feature_index(gen_by)];
            let other = f[reg.ppl_feature_index(1 - gen_by)];
            if own < other {
                wins += 1;
            }
        }
        assert!(wins >= 180, "wins {wins}/{trials}");
    }

    #[test]
    fn kgw_z_feature_exceeds_threshold_on_watermarked_text() {
        // High-entropy models: the logit bias needs headroom to act, as in
        // the detector power tests.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let text: Vec<&str> = (0..20_000)
            .map(|_| words[rng.gen_range(0..200)].as_str())
            .collect();
        let m = NGramModel::train_text(&text.join(" "), 2, 0.05, "m0", 5000).unwrap();
        let mut m1 = m.clone();
        m1 = NGramModel::train(
            &m1.generate(
                &TokenSequence::external(vec![2]),
                20_000,
                crate::lm::Sampler::Multinomial,
                3,
            )
            .ids,
            2,
            0.05,
            "m1",
            m.vocab().clone(),
        )
        .unwrap();
        let models = vec![m, m1];
        let scheme = SchemeConfig::new(SchemeKind::Kgw, WatermarkKey(0xfeed));
        let reg =
            FeatureRegistry::new(&models, vec![("kgw".into(), scheme)], None).unwrap();
        let prompt = TokenSequence::external(vec![2]);
        let mut hits = 0usize;
        let trials = 100;
        for seed in 0..trials as u64 {
            let text =
                watermarked_generate(&models[0], &prompt, &scheme, 200, seed, None).unwrap();
            let f = extract_features(&text, &reg).unwrap();
            if f[reg.z_feature_index(0)] > 4.0 {
                hits += 1;
            }
        }
        assert!(hits >= 99, "hits {hits}/{trials}");
    }

    #[test]
    fn batch_matches_single() {
        let models = skewed_pair(50);
        let reg = FeatureRegistry::new(&models, vec![], None).unwrap();
        let prompt = TokenSequence::external(vec![2]);
        let texts: Vec<_> = (0..8)
            .map(|s| models[0].generate(&prompt, 50, crate::lm::Sampler::Multinomial, s))
            .collect();
        let batch = extract_features_batch(&texts, &reg).unwrap();
        for (t, b) in texts.iter().zip(&batch) {
            assert_eq!(&extract_features(t, &reg).unwrap(), b);
        }
    }

    #[test]
    fn mismatched_vocabularies_are_rejected() {
        let a = skewed_pair(50).remove(0);
        let b = skewed_pair(60).remove(0);
        let models = vec![a, b];
        assert!(FeatureRegistry::new(&models, vec![], None).is_err());
    }
}
