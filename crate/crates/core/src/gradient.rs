//! Analytic gradients of the localization loss.
//!
//! With joint terms `l_i = ln φ_i + ln N_i(x)` and responsibilities
//! `γ = softmax(l)`, the loss `-ln Σ exp(l_i)` has
//!
//! - `∂/∂z_i = φ_i - γ_i`
//! - `∂/∂μ_i = -γ_i Uᵢᵀ Uᵢ (x - μ_i)`
//! - `∂/∂u_ab = γ_i s_a r_b` for `a < b`, where `r = x - μ_i` and `s = Uᵢ r`
//! - `∂/∂u_aa = -γ_i (1 - s_a r_a exp(u_aa))`

use alloc::vec;
use alloc::vec::Vec;

use crate::distribution::{
    joint_log_terms, nll_loss, LossVariant, MixtureParams, DIM, LOG_DIAG_BOUND, N_OFF_DIAG, OFF_DIAG_INDEX,
    PARAMS_PER_COMPONENT,
};
use crate::error::{invalid, Result};
use crate::math;
use crate::BoxVector;

/// Gradient with the same shape as [`MixtureParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub d_means: Vec<[f64; DIM]>,
    pub d_log_diag: Vec<[f64; DIM]>,
    pub d_off_diag: Vec<[f64; N_OFF_DIAG]>,
    pub d_weight_logits: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(k: usize) -> Self {
        ParamGradient {
            d_means: vec![[0.0; DIM]; k],
            d_log_diag: vec![[0.0; DIM]; k],
            d_off_diag: vec![[0.0; N_OFF_DIAG]; k],
            d_weight_logits: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.d_means.len()
    }

    /// Same block layout as [`MixtureParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k() * PARAMS_PER_COMPONENT);
        out.extend(self.d_means.iter().flatten());
        out.extend_from_slice(&self.d_weight_logits);
        out.extend(self.d_log_diag.iter().flatten());
        out.extend(self.d_off_diag.iter().flatten());
        out
    }

    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != k * PARAMS_PER_COMPONENT {
            return Err(crate::Error::Shape {
                expected: k * PARAMS_PER_COMPONENT,
                actual: flat.len(),
            });
        }
        let (means, rest) = flat.split_at(DIM * k);
        let (logits, rest) = rest.split_at(k);
        let (log_diag, off_diag) = rest.split_at(DIM * k);
        Ok(ParamGradient {
            d_means: means
                .chunks_exact(DIM)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
            d_log_diag: log_diag
                .chunks_exact(DIM)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
            d_off_diag: off_diag
                .chunks_exact(N_OFF_DIAG)
                .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
                .collect(),
            d_weight_logits: logits.to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Posterior component probabilities `γ_i` of `target`.
pub fn responsibilities(target: &BoxVector, params: &MixtureParams) -> Vec<f64> {
    math::softmax(&joint_log_terms(target, params))
}

/// Gradient of [`nll_loss`] with respect to every entry of `params`.
///
/// Entries the variant holds fixed get a zero gradient. A log-diagonal entry
/// sitting on its clamp bound gets zero when descent would push it outward.
pub fn grad_nll(target: &BoxVector, params: &MixtureParams, variant: LossVariant) -> Result<ParamGradient> {
    variant.validate(params)?;
    let gamma = responsibilities(target, params);
    let phi = params.weights();
    let mut grad = ParamGradient::zeros(params.k());

    for (i, (mean, factor)) in params.means().iter().zip(params.factors()).enumerate() {
        let g = gamma[i];
        let r = target.residual(mean);
        let s = factor.apply(&r);
        let uts = factor.apply_transpose(&s);
        grad.d_means[i] = uts.map(|v| -g * v);

        if variant.learns_log_diag() {
            let diag = factor.diag();
            for a in 0..DIM {
                let mut d = -g * (1.0 - s[a] * r[a] * diag[a]);
                let u = factor.log_diag()[a];
                if (u >= LOG_DIAG_BOUND && d < 0.0) || (u <= -LOG_DIAG_BOUND && d > 0.0) {
                    d = 0.0;
                }
                grad.d_log_diag[i][a] = d;
            }
        }
        if variant.learns_off_diag() {
            for (slot, &(a, b)) in OFF_DIAG_INDEX.iter().enumerate() {
                grad.d_off_diag[i][slot] = g * s[a] * r[b];
            }
        }
        if !variant.single_component() {
            grad.d_weight_logits[i] = phi[i] - g;
        }
    }
    Ok(grad)
}

/// Central differences `(f(p + h) - f(p - h)) / 2h` of [`nll_loss`] for every free scalar.
pub fn finite_difference_gradient(
    target: &BoxVector,
    params: &MixtureParams,
    variant: LossVariant,
    step: f64,
) -> Result<ParamGradient> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("finite-difference step must be positive"));
    }
    variant.validate(params)?;
    let k = params.k();
    let base = params.to_flat();
    let mut out = vec![0.0; base.len()];
    let mut probe = base.clone();
    for (idx, slot) in out.iter_mut().enumerate() {
        if !variant.is_free(k, idx) {
            continue;
        }
        probe[idx] = base[idx] + step;
        let plus = nll_loss(target, &MixtureParams::from_flat(k, &probe)?, variant)?;
        probe[idx] = base[idx] - step;
        let minus = nll_loss(target, &MixtureParams::from_flat(k, &probe)?, variant)?;
        probe[idx] = base[idx];
        *slot = (plus - minus) / (2.0 * step);
    }
    ParamGradient::from_flat(k, &out)
}
