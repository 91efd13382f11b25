//! Log-domain helpers shared by the density, gradient and training code.

use alloc::vec::Vec;

/// `2 ln 2π`, the normalizer of a 4-dimensional standard Gaussian in log space.
pub const TWO_LN_2PI: f64 = 3.675_754_132_818_690_8;

/// `ln 2π / 2`, the per-coordinate normalizer.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// `ln Σ exp(v_i)` with max-subtraction.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| exp(v - max)).sum();
    max + ln(sum)
}

/// Log-softmax of `logits`; entries are `z_i - logsumexp(z)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| z - lse).collect()
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| exp(z - max)).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a {0,1} label, `softplus(x) - y x`.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    let softplus = if logit > 0.0 {
        logit + libm::log1p(exp(-logit))
    } else {
        libm::log1p(exp(logit))
    };
    softplus - label * logit
}
