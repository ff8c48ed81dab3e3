//! Desk-scale lab for language-model text watermarking and IP protection:
//! deterministic toy language models, watermark generators and detectors,
//! watermark-removal attacks, a cross-model source classifier, a
//! model-stealing simulation, and a reproducible experiment harness.

pub mod attacks;
pub mod classifier;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod harness;
pub mod lm;
pub mod num;
pub mod prf;
pub mod stealing;
pub mod synonyms;
pub mod watermark;

/// Concrete scalar used throughout the pipeline. Numeric kernels in
/// [`num`] are generic over `num_traits::Float`; this alias pins what the
/// pipeline actually runs on.
pub type Scalar = f64;

pub use error::{Error, Result};
