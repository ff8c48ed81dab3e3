//! EXP: a sampling-intervention watermark. Each position's token is picked as
//! `argmax_v xi[v]^(1/p[v])` against a keyed pseudo-random row; over random
//! keys the choice is distributed exactly as `p`, so the model's output
//! distribution is preserved in expectation.

use crate::error::{Error, Result};
use crate::prf::{mix2, mix3, unit_open};
use crate::watermark::WatermarkKey;
use crate::Scalar;

/// Domain separation from the partition PRF.
const EXP_TAG: u64 = 0x4558_5057_4d4b_4559; // "EXPWMKEY"

/// Cyclic keyed key sequence: `n` rows of |V| values in (0,1), computed
/// lazily from the key. Position `i` of a generation uses row `i mod n`.
#[derive(Clone, Debug)]
pub struct ExpKeySequence {
    key: u64,
    rows: usize,
    vocab_size: usize,
}

impl ExpKeySequence {
    pub fn new(key: WatermarkKey, rows: usize, vocab_size: usize) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidParameter("key sequence needs >= 1 row".into()));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidParameter("empty vocabulary".into()));
        }
        Ok(Self {
            key: mix2(key.0, EXP_TAG),
            rows,
            vocab_size,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn row_for_position(&self, pos: usize) -> usize {
        pos % self.rows
    }

    /// One pseudo-random value in (0,1), deterministic in (key, row, token).
    #[inline]
    pub fn xi(&self, row: usize, token: u32) -> Scalar {
        unit_open(mix3(self.key, (row % self.rows) as u64, token as u64))
    }

    pub fn row_vector(&self, row: usize) -> Vec<Scalar> {
        (0..self.vocab_size as u32).map(|v| self.xi(row, v)).collect()
    }
}

/// Exponential-minimum sampling: `argmax_v xi[v]^(1/p[v])`, excluding tokens
/// with zero probability. Ties resolve to the lowest id.
pub fn exp_sample(probabilities: &[Scalar], xi_row: &[Scalar]) -> Result<u32> {
    if probabilities.len() != xi_row.len() {
        return Err(Error::InvalidInput(format!(
            "probability vector of {} vs xi row of {}",
            probabilities.len(),
            xi_row.len()
        )));
    }
    let mut best: Option<(Scalar, u32)> = None;
    for (v, (&p, &xi)) in probabilities.iter().zip(xi_row).enumerate() {
        if p <= 0.0 {
            continue;
        }
        debug_assert!(xi > 0.0 && xi < 1.0);
        // log of xi^(1/p); monotone in the original quantity.
        let score = xi.ln() / p;
        match best {
            Some((b, _)) if score <= b => {}
            _ => best = Some((score, v as u32)),
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidInput("all-zero probability vector".into()))
}
