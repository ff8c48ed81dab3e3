//! Scalar-generic numeric helpers shared across the crate.
//!
//! Core math is written against [`num_traits::Float`] so the same routines
//! serve `f32` and `f64`; the crate-level [`crate::Scalar`] alias pins the
//! concrete type used by the pipeline.

use num_traits::Float;

/// Numerically stable in-place softmax.
pub fn softmax_in_place<F: Float>(xs: &mut [F]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

pub fn log_sum_exp<F: Float>(xs: &[F]) -> F {
    let max = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    let sum = xs
        .iter()
        .fold(F::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

pub fn mean<F: Float>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    let n = F::from(xs.len()).unwrap();
    xs.iter().fold(F::zero(), |a, &x| a + x) / n
}

/// Sample mean and standard deviation (n−1 denominator; 0 for n < 2).
pub fn mean_std<F: Float>(xs: &[F]) -> (F, F) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, F::zero());
    }
    let n1 = F::from(xs.len() - 1).unwrap();
    let var = xs.iter().fold(F::zero(), |a, &x| a + (x - m) * (x - m)) / n1;
    (m, var.sqrt())
}

/// Binomial z statistic for `hits` successes in `trials` with null rate `p0`.
pub fn binomial_z<F: Float>(hits: F, trials: F, p0: F) -> F {
    let denom = (trials * p0 * (F::one() - p0)).sqrt();
    if denom == F::zero() {
        return F::zero();
    }
    (hits - trials * p0) / denom
}

/// One-sided upper tail of the standard normal, P(Z >= z).
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Exact binomial(n, 1/2) upper-tail p-value for a sign test:
/// P(X >= wins) under the null of no direction.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=trials {
        p += binomial_pmf_half(k, trials);
    }
    p.min(1.0)
}

fn binomial_pmf_half(k: usize, n: usize) -> f64 {
    // C(n, k) / 2^n computed in log space.
    let mut log_c = 0.0f64;
    for i in 0..k {
        log_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (log_c - n as f64 * std::f64::consts::LN_2).exp()
}

/// One-sided paired test that `mean(a - b) > 0`, returning the p-value via a
/// large-sample normal approximation of the paired t statistic.
pub fn paired_greater_p(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = mean_std(&diffs);
    if s == 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = m / (s / (diffs.len() as f64).sqrt());
    normal_upper_tail(t)
}

/// Pearson chi-square statistic for observed counts against expected
/// probabilities over the same support.
pub fn chi_square_stat(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            continue;
        }
        let e = n as f64 * p;
        stat += (o as f64 - e).powi(2) / e;
    }
    stat
}
