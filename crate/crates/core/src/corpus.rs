//! Deterministic synthetic reference corpus: four shards drawn from closely
//! related Markov chains over a shared pseudo-word lexicon. The shards are
//! near duplicates by design; attribution should be possible but not easy.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::prf::{mix2, mix3};

pub const NUM_SHARDS: usize = 4;
pub const SHARD_NAMES: [&str; NUM_SHARDS] = ["shard_a", "shard_b", "shard_c", "shard_d"];

const LEXICON_SIZE: usize = 900;
const SHARD_TOKENS: usize = 80_000;
const WORDS_PER_LINE: usize = 13;

/// Mixture weights of the per-shard next-word law:
/// shared Zipf body + shared bigram kernel + small shard-specific kernel.
/// The shard weight controls how separable the shards are; it is frozen
/// where attribution of 200-token texts is good but imperfect.
const W_BASE: f64 = 0.30;
const W_SHARD: f64 = 0.01;
const ZIPF_EXP: f64 = 0.8;
/// Preferred successors per word in each kernel.
const FANOUT: usize = 6;

const BASE_SALT: u64 = 0x6261_7365;
const SHARD_SALT: u64 = 0x7368_6472;
const GEN_SEED: u64 = 0x636f_7270_7573;

/// Pseudo-word lexicon; index is the Zipf rank.
pub fn lexicon() -> Vec<String> {
    const SYL: [&str; 30] = [
        "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko",
        "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni",
        "no", "nu",
    ];
    (0..LEXICON_SIZE)
        .map(|i| format!("{}{}", SYL[i / SYL.len()], SYL[i % SYL.len()]))
        .collect()
}

fn zipf_cumulative() -> Vec<f64> {
    let mut cum = Vec::with_capacity(LEXICON_SIZE);
    let mut total = 0.0;
    for i in 0..LEXICON_SIZE {
        total += 1.0 / ((i + 1) as f64).powf(ZIPF_EXP);
        cum.push(total);
    }
    for c in cum.iter_mut() {
        *c /= total;
    }
    cum
}

fn kernel_successor(salt: u64, cur: usize, slot: usize) -> usize {
    (mix2(salt, (cur * FANOUT + slot) as u64) % LEXICON_SIZE as u64) as usize
}

fn shard_successor(shard: usize, cur: usize, slot: usize) -> usize {
    (mix3(SHARD_SALT, shard as u64, (cur * FANOUT + slot) as u64) % LEXICON_SIZE as u64)
        as usize
}

/// Word-id stream of one shard.
fn shard_ids(shard: usize) -> Vec<usize> {
    assert!(shard < NUM_SHARDS);
    let zipf = zipf_cumulative();
    let mut rng = ChaCha8Rng::seed_from_u64(mix2(GEN_SEED, shard as u64));
    let mut out = Vec::with_capacity(SHARD_TOKENS);
    let mut cur = 0usize;
    for _ in 0..SHARD_TOKENS {
        let r: f64 = rng.gen();
        let next = if r < W_SHARD {
            shard_successor(shard, cur, rng.gen_range(0..FANOUT))
        } else if r < W_SHARD + W_BASE {
            kernel_successor(BASE_SALT, cur, rng.gen_range(0..FANOUT))
        } else {
            let u: f64 = rng.gen();
            zipf.partition_point(|&c| c < u).min(LEXICON_SIZE - 1)
        };
        out.push(next);
        cur = next;
    }
    out
}

/// Full text of one shard, fixed line width.
pub fn shard_text(shard: usize) -> String {
    let words = lexicon();
    let ids = shard_ids(shard);
    let mut text = String::with_capacity(ids.len() * 5);
    for (i, &id) in ids.iter().enumerate() {
        text.push_str(&words[id]);
        if (i + 1) % WORDS_PER_LINE == 0 {
            text.push('\n');
        } else {
            text.push(' ');
        }
    }
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

/// Writes all shards as `<dir>/<name>.txt`, returning the paths.
pub fn write_shards(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(NUM_SHARDS);
    for (s, name) in SHARD_NAMES.iter().enumerate() {
        let path = dir.join(format!("{name}.txt"));
        std::fs::write(&path, shard_text(s))?;
        paths.push(path);
    }
    Ok(paths)
}
