//! Watermark generators: the logit-bias family (KGW, Unigram, SIR-lite) and
//! the sampling-intervention family (EXP).

mod exp;
mod generate;
mod partition;
mod sir;

pub use exp::{exp_sample, ExpKeySequence};
pub use generate::watermarked_generate;
pub use partition::{kgw_partition, unigram_partition, GreenPartition, PartitionCache};
pub use sir::{sirlite_bias_vector, sirlite_context_hash, sirlite_token_sign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::mix2;
use crate::Scalar;

/// Secret watermarking key. Redacted in `Debug` output; never written into
/// reports.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WatermarkKey(pub u64);

impl std::fmt::Debug for WatermarkKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("WatermarkKey(<redacted>)")
    }
}

impl WatermarkKey {
    /// Derive a per-model (or per-purpose) subkey.
    pub fn derive(&self, salt: u64) -> WatermarkKey {
        WatermarkKey(mix2(self.0, salt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Kgw,
    Unigram,
    SirLite,
    Exp,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Kgw => "kgw",
            SchemeKind::Unigram => "unigram",
            SchemeKind::SirLite => "sir-lite",
            SchemeKind::Exp => "exp",
        }
    }
}

/// Full configuration of one watermark scheme instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Green-list fraction (logit family).
    pub gamma: Scalar,
    /// Additive logit bias (logit family).
    pub delta: Scalar,
    /// Seeding context width h. KGW requires h >= 1; Unigram fixes h = 0.
    pub context_width: usize,
    pub key: WatermarkKey,
    /// Key sequence length n (EXP only); rows are reused cyclically.
    pub exp_key_length: usize,
    /// Random cyclic shift of the key sequence per generation (EXP only).
    pub exp_random_shift: bool,
    /// Synonym class count for the modulo fallback when no table is given
    /// (SIR-lite only).
    pub num_synonym_classes: usize,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, key: WatermarkKey) -> Self {
        Self {
            kind,
            gamma: 0.25,
            delta: 2.0,
            context_width: if kind == SchemeKind::Kgw { 1 } else { 0 },
            key,
            exp_key_length: 256,
            exp_random_shift: false,
            num_synonym_classes: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SchemeKind::Kgw | SchemeKind::Unigram | SchemeKind::SirLite => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must lie in (0,1), got {}",
                        self.gamma
                    )));
                }
                if self.delta < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "delta must be >= 0, got {}",
                        self.delta
                    )));
                }
                if self.kind == SchemeKind::Kgw && self.context_width < 1 {
                    return Err(Error::InvalidParameter(
                        "KGW requires context width h >= 1".into(),
                    ));
                }
                if self.kind == SchemeKind::Unigram && self.context_width != 0 {
                    return Err(Error::InvalidParameter(
                        "Unigram fixes context width h = 0".into(),
                    ));
                }
                if self.kind == SchemeKind::SirLite && self.num_synonym_classes < 2 {
                    return Err(Error::InvalidParameter(
                        "SIR-lite needs at least 2 synonym classes".into(),
                    ));
                }
            }
            SchemeKind::Exp => {
                if self.exp_key_length == 0 {
                    return Err(Error::InvalidParameter(
                        "EXP key sequence length must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Context width used for detection scoring (tokens whose seeding context
    /// falls outside the scored text are skipped).
    pub fn detection_skip(&self) -> usize {
        match self.kind {
            SchemeKind::Kgw => self.context_width,
            _ => 0,
        }
    }
}

/// Bias applied to a logit vector.
pub enum LogitBias<'a> {
    /// Add `delta` to green entries, leave the rest unchanged.
    Green {
        partition: &'a GreenPartition,
        delta: Scalar,
    },
    /// Add a full per-token bias vector (SIR-lite: ±delta).
    Vector(&'a [Scalar]),
}

/// Apply a logit bias; renormalization happens at softmax time.
pub fn bias_logits(logits: &[Scalar], bias: &LogitBias) -> Result<Vec<Scalar>> {
    match bias {
        LogitBias::Green { partition, delta } => {
            if logits.len() != partition.len() {
                return Err(Error::InvalidInput(format!(
                    "logit vector of {} vs partition over {}",
                    logits.len(),
                    partition.len()
                )));
            }
            Ok(logits
                .iter()
                .enumerate()
                .map(|(v, &x)| if partition.is_green(v as u32) { x + delta } else { x })
                .collect())
        }
        LogitBias::Vector(biases) => {
            if logits.len() != biases.len() {
                return Err(Error::InvalidInput(format!(
                    "logit vector of {} vs bias vector of {}",
                    logits.len(),
                    biases.len()
                )));
            }
            Ok(logits.iter().zip(*biases).map(|(&x, &b)| x + b).collect())
        }
    }
}
