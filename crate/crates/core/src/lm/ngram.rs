use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::vocab::{TokenSequence, Vocabulary, BOS_ID};
use crate::Scalar;

pub const MODEL_MAGIC: &str = "WMLAB-NGRAM-1";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct ContextCounts {
    next: HashMap<u32, u64>,
    total: u64,
}

/// Deterministic add-k smoothed n-gram model with stupid backoff.
///
/// Counts are kept for every context length from 0 (unigram) up to
/// `order - 1`, so backoff always terminates at the unigram table.
/// Probabilities are `(count + k) / (total + k * |V|)` over the longest
/// context seen in training; smoothing guarantees every token has nonzero
/// probability in every context.
#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    vocab: Arc<Vocabulary>,
    counts: HashMap<Vec<u32>, ContextCounts>,
    smoothing_k: Scalar,
    model_id: String,
}

/// Token selection strategy for [`NGramModel::generate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Argmax, lowest id on ties.
    Greedy,
    /// Temperature-1 multinomial sampling.
    Multinomial,
}

impl NGramModel {
    /// Train from a token id corpus against an existing vocabulary.
    pub fn train(
        corpus: &[u32],
        order: usize,
        smoothing_k: Scalar,
        model_id: impl Into<String>,
        vocab: Arc<Vocabulary>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("n-gram order must be >= 1".into()));
        }
        if !(smoothing_k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothing_k must be > 0, got {smoothing_k}"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::CorpusTooSmall("empty training corpus".into()));
        }
        if corpus.len() < order {
            return Err(Error::CorpusTooSmall(format!(
                "corpus of {} tokens is shorter than order {order}",
                corpus.len()
            )));
        }
        let vocab_len = vocab.len() as u32;
        if let Some(&bad) = corpus.iter().find(|&&id| id >= vocab_len) {
            return Err(Error::InvalidInput(format!(
                "corpus id {bad} out of range for vocabulary of {vocab_len}"
            )));
        }

        let mut model = Self {
            order,
            vocab,
            counts: HashMap::new(),
            smoothing_k,
            model_id: model_id.into(),
        };
        // BOS padding so the first tokens have full-width contexts.
        let mut padded = vec![BOS_ID; order - 1];
        padded.extend_from_slice(corpus);
        for i in (order - 1)..padded.len() {
            let target = padded[i];
            for ctx_len in 0..order {
                let ctx = padded[i - ctx_len..i].to_vec();
                let cc = model.counts.entry(ctx).or_default();
                *cc.next.entry(target).or_insert(0) += 1;
                cc.total += 1;
            }
        }
        Ok(model)
    }

    /// Train from raw text, building a fresh vocabulary (capped).
    pub fn train_text(
        text: &str,
        order: usize,
        smoothing_k: Scalar,
        model_id: impl Into<String>,
        vocab_cap: usize,
    ) -> Result<Self> {
        let vocab = Arc::new(Vocabulary::from_corpus_text(text, vocab_cap)?);
        let corpus = vocab.encode(text);
        Self::train(&corpus, order, smoothing_k, model_id, vocab)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn smoothing_k(&self) -> Scalar {
        self.smoothing_k
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Longest trained suffix of `context` (stupid backoff), down to the
    /// always-present unigram table.
    fn backoff_counts(&self, context: &[u32]) -> (&ContextCounts, usize) {
        let max = context.len().min(self.order - 1);
        for len in (1..=max).rev() {
            let suffix = &context[context.len() - len..];
            if let Some(cc) = self.counts.get(suffix) {
                return (cc, len);
            }
        }
        (
            self.counts
                .get(&Vec::new() as &Vec<u32>)
                .expect("unigram table always trained"),
            0,
        )
    }

    /// Context length actually used after backoff (test hook).
    pub fn effective_context_len(&self, context: &[u32]) -> usize {
        self.backoff_counts(context).1
    }

    /// P(token | context) under add-k smoothing at the backed-off context.
    pub fn token_prob(&self, context: &[u32], token: u32) -> Scalar {
        let (cc, _) = self.backoff_counts(context);
        let k = self.smoothing_k;
        let v = self.vocab.len() as Scalar;
        let c = cc.next.get(&token).copied().unwrap_or(0) as Scalar;
        (c + k) / (cc.total as Scalar + k * v)
    }

    /// Full next-token distribution over the vocabulary.
    pub fn next_token_distribution(&self, context: &[u32]) -> Vec<Scalar> {
        let (cc, _) = self.backoff_counts(context);
        let k = self.smoothing_k;
        let v = self.vocab.len() as Scalar;
        let denom = cc.total as Scalar + k * v;
        let mut dist = vec![k / denom; self.vocab.len()];
        for (&tok, &c) in &cc.next {
            dist[tok as usize] += c as Scalar / denom;
        }
        dist
    }

    /// Shannon entropy (nats) of the next-token distribution.
    pub fn context_entropy(&self, context: &[u32]) -> Scalar {
        self.next_token_distribution(context)
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum()
    }

    /// Number of trained tokens strictly more probable than `token` in this
    /// context (0 = the model's top choice).
    pub fn token_rank(&self, context: &[u32], token: u32) -> usize {
        let (cc, _) = self.backoff_counts(context);
        let c = cc.next.get(&token).copied().unwrap_or(0);
        cc.next.values().filter(|&&w| w > c).count()
    }

    /// Autoregressive generation; returns the completion only.
    pub fn generate(
        &self,
        prompt: &TokenSequence,
        length: usize,
        sampler: Sampler,
        rng_seed: u64,
    ) -> TokenSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut context: Vec<u32> = prompt.ids.clone();
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let dist = self.next_token_distribution(&context);
            let next = match sampler {
                Sampler::Greedy => argmax(&dist),
                Sampler::Multinomial => sample_multinomial(&dist, &mut rng),
            };
            out.push(next);
            context.push(next);
        }
        TokenSequence::new(out, self.model_id.clone())
    }

    /// exp of mean negative log-likelihood per token. The first tokens are
    /// conditioned on BOS padding, as in training.
    pub fn perplexity(&self, text: &TokenSequence) -> Result<Scalar> {
        if text.is_empty() {
            return Err(Error::InvalidInput(
                "perplexity of an empty sequence is undefined".into(),
            ));
        }
        let mut nll = 0.0;
        for i in 0..text.ids.len() {
            let start = i.saturating_sub(self.order - 1);
            nll -= self.token_prob(&text.ids[start..i], text.ids[i]).ln();
        }
        Ok((nll / text.ids.len() as Scalar).exp())
    }

    /// Per-position negative log-likelihood terms (used by incremental
    /// perplexity tracking in the attacks module).
    pub fn position_nll(&self, ids: &[u32], i: usize) -> Scalar {
        let start = i.saturating_sub(self.order - 1);
        -self.token_prob(&ids[start..i], ids[i]).ln()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "model_id {}", self.model_id)?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "vocab {}", self.vocab.len())?;
        writeln!(w, "k {}", self.smoothing_k)?;
        for tok in self.vocab.tokens() {
            writeln!(w, "{tok}")?;
        }
        let mut contexts: Vec<&Vec<u32>> = self.counts.keys().collect();
        contexts.sort();
        writeln!(w, "contexts {}", contexts.len())?;
        for ctx in contexts {
            let cc = &self.counts[ctx];
            let mut pairs: Vec<(u32, u64)> = cc.next.iter().map(|(&t, &c)| (t, c)).collect();
            pairs.sort();
            let ctx_str = ctx
                .iter()
                .map(|id| id.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let pairs_str = pairs
                .iter()
                .map(|(t, c)| format!("{t}:{c}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{ctx_str}|{pairs_str}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::ModelFormat(format!("unexpected EOF reading {what}")))
        };
        let magic = next_line("magic")?;
        if magic != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!("bad magic line {magic:?}")));
        }
        let model_id = field(&next_line("model_id")?, "model_id")?;
        let order: usize = parse(&field(&next_line("order")?, "order")?)?;
        let vocab_len: usize = parse(&field(&next_line("vocab")?, "vocab")?)?;
        let smoothing_k: Scalar = parse(&field(&next_line("k")?, "k")?)?;
        let mut tokens = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            tokens.push(next_line("vocab token")?);
        }
        if tokens.first().map(String::as_str) != Some(super::vocab::BOS_TOKEN) {
            return Err(Error::ModelFormat("first vocab entry is not BOS".into()));
        }
        let vocab = Arc::new(Vocabulary::from_ranked_tokens(tokens.into_iter().skip(2)));
        let num_contexts: usize = parse(&field(&next_line("contexts")?, "contexts")?)?;
        let mut counts = HashMap::with_capacity(num_contexts);
        for _ in 0..num_contexts {
            let line = next_line("context line")?;
            let (ctx_str, pairs_str) = line
                .split_once('|')
                .ok_or_else(|| Error::ModelFormat(format!("bad context line {line:?}")))?;
            let ctx: Vec<u32> = ctx_str
                .split_whitespace()
                .map(parse)
                .collect::<Result<_>>()?;
            let mut cc = ContextCounts::default();
            for pair in pairs_str.split_whitespace() {
                let (t, c) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::ModelFormat(format!("bad count pair {pair:?}")))?;
                let count: u64 = parse(c)?;
                cc.next.insert(parse(t)?, count);
                cc.total += count;
            }
            counts.insert(ctx, cc);
        }
        Ok(Self {
            order,
            vocab,
            counts,
            smoothing_k,
            model_id,
        })
    }

    /// Structural equality of count tables (determinism checks).
    pub fn same_counts(&self, other: &Self) -> bool {
        self.counts == other.counts
    }
}

fn field(line: &str, name: &str) -> Result<String> {
    line.strip_prefix(&format!("{name} "))
        .map(str::to_string)
        .ok_or_else(|| Error::ModelFormat(format!("expected `{name} ...`, got {line:?}")))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::ModelFormat(format!("cannot parse {s:?}")))
}

pub(crate) fn argmax(dist: &[Scalar]) -> u32 {
    let mut best = 0usize;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn sample_multinomial<R: Rng>(dist: &[Scalar], rng: &mut R) -> u32 {
    let r: Scalar = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if r < acc {
            return i as u32;
        }
    }
    (dist.len() - 1) as u32
}
