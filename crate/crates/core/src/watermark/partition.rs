use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::prf::{hash_ids, mix3};
use crate::watermark::WatermarkKey;
use crate::Scalar;

/// A keyed green/red split of the vocabulary with exact green cardinality
/// `round(gamma * |V|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenPartition {
    mask: Vec<bool>,
    green_count: usize,
    gamma: Scalar,
}

impl GreenPartition {
    pub fn is_green(&self, id: u32) -> bool {
        self.mask[id as usize]
    }

    pub fn green_count(&self) -> usize {
        self.green_count
    }

    pub fn gamma(&self) -> Scalar {
        self.gamma
    }

    /// Vocabulary size covered by the partition.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn green_ids(&self) -> Vec<u32> {
        (0..self.mask.len() as u32).filter(|&v| self.is_green(v)).collect()
    }
}

/// Context-seeded partition (KGW): tokens are ranked by a keyed PRF of
/// (key, context hash, token id) and the lowest `round(gamma |V|)` go green.
pub fn kgw_partition(
    key: WatermarkKey,
    context: &[u32],
    gamma: Scalar,
    vocab_size: usize,
) -> Result<GreenPartition> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0,1), got {gamma}"
        )));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidParameter("empty vocabulary".into()));
    }
    let ctx_hash = hash_ids(context);
    let target = (gamma * vocab_size as Scalar).round() as usize;
    let target = target.min(vocab_size);
    let mut scored: Vec<(u64, u32)> = (0..vocab_size as u32)
        .map(|v| (mix3(key.0, ctx_hash, v as u64), v))
        .collect();
    let mut mask = vec![false; vocab_size];
    if target > 0 && target < vocab_size {
        scored.select_nth_unstable(target - 1);
    }
    for &(_, v) in scored.iter().take(target) {
        mask[v as usize] = true;
    }
    Ok(GreenPartition {
        mask,
        green_count: target,
        gamma,
    })
}

/// Context-free partition (Unigram): one fixed split per key, shared across
/// every position. Same code path as KGW with an empty context.
pub fn unigram_partition(
    key: WatermarkKey,
    gamma: Scalar,
    vocab_size: usize,
) -> Result<GreenPartition> {
    kgw_partition(key, &[], gamma, vocab_size)
}

/// Memoizes partitions by context hash. With context width 1 at most |V| + 1
/// distinct partitions ever exist, so generation and batch detection reuse
/// them heavily.
pub struct PartitionCache {
    key: WatermarkKey,
    gamma: Scalar,
    vocab_size: usize,
    map: HashMap<u64, Arc<GreenPartition>>,
}

impl PartitionCache {
    pub fn new(key: WatermarkKey, gamma: Scalar, vocab_size: usize) -> Self {
        Self {
            key,
            gamma,
            vocab_size,
            map: HashMap::new(),
        }
    }

    pub fn partition(&mut self, context: &[u32]) -> Result<Arc<GreenPartition>> {
        let h = hash_ids(context);
        if let Some(p) = self.map.get(&h) {
            return Ok(p.clone());
        }
        let p = Arc::new(kgw_partition(self.key, context, self.gamma, self.vocab_size)?);
        self.map.insert(h, p.clone());
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key() -> WatermarkKey {
        WatermarkKey(0xdead_beef_cafe)
    }

    #[test]
    fn cardinality_is_exact() {
        let p = kgw_partition(key(), &[1, 2], 0.5, 10).unwrap();
        assert_eq!(p.green_count(), 5);
        assert_eq!(p.green_ids().len(), 5);
        let p = unigram_partition(key(), 0.25, 1000).unwrap();
        assert_eq!(p.green_count(), 250);
    }

    #[test]
    fn partition_is_deterministic() {
        let a = kgw_partition(key(), &[7, 8, 9], 0.3, 100).unwrap();
        let b = kgw_partition(key(), &[7, 8, 9], 0.3, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_contexts_differ_with_high_probability() {
        let mut distinct = 0;
        let base = kgw_partition(key(), &[0], 0.5, 200).unwrap();
        for c in 1..50u32 {
            if kgw_partition(key(), &[c], 0.5, 200).unwrap() != base {
                distinct += 1;
            }
        }
        assert!(distinct >= 48);
    }

    #[test]
    fn kgw_with_empty_context_equals_unigram() {
        let a = kgw_partition(key(), &[], 0.25, 64).unwrap();
        let b = unigram_partition(key(), 0.25, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_out_of_range_is_rejected() {
        assert!(kgw_partition(key(), &[], 0.0, 10).is_err());
        assert!(kgw_partition(key(), &[], 1.0, 10).is_err());
    }

    #[test]
    fn membership_rate_matches_gamma_over_random_contexts() {
        // Each token should be green in about gamma of the contexts.
        // 2000 contexts put the ±0.04 band past 4 sigma per token, so the
        // simultaneous check over all 1000 tokens is stable.
        let vocab = 1000usize;
        let contexts = 2000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut green_counts = vec![0u32; vocab];
        for _ in 0..contexts {
            let ctx = [rng.gen::<u32>() % vocab as u32, rng.gen::<u32>() % vocab as u32];
            let p = kgw_partition(key(), &ctx, 0.25, vocab).unwrap();
            for v in 0..vocab as u32 {
                if p.is_green(v) {
                    green_counts[v as usize] += 1;
                }
            }
        }
        for &c in &green_counts {
            let rate = c as f64 / contexts as f64;
            assert!((rate - 0.25).abs() <= 0.04, "rate {rate}");
        }
    }

    #[test]
    fn exact_cardinality_over_many_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let k = WatermarkKey(rng.gen());
            let ctx = [rng.gen::<u32>() % 100];
            let p = kgw_partition(k, &ctx, 0.25, 100).unwrap();
            assert_eq!(p.green_count(), 25);
            assert_eq!(p.mask.iter().filter(|&&g| g).count(), 25);
        }
    }

    #[test]
    fn cache_returns_identical_partitions() {
        let mut cache = PartitionCache::new(key(), 0.25, 64);
        let a = cache.partition(&[5]).unwrap();
        let b = cache.partition(&[5]).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let direct = kgw_partition(key(), &[5], 0.25, 64).unwrap();
        assert_eq!(*a, direct);
    }
}
