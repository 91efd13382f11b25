//! Mixture of 4D Gaussians over box coordinates.
//!
//! Each component is parameterized by its mean and an upper-triangular
//! Cholesky factor `U` of its *precision* matrix, `Σ⁻¹ = Uᵀ U`. The diagonal of
//! `U` is stored in log space so it stays strictly positive. Densities are
//! evaluated through the residual `U (x - μ)`; no matrix is ever inverted here.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{self, TWO_LN_2PI};

/// Number of box coordinates.
pub const DIM: usize = 4;

/// Number of strictly upper off-diagonal entries of a 4×4 factor.
pub const N_OFF_DIAG: usize = 6;

/// Scalars per mixture component: mean, weight logit, log-diagonal, off-diagonal.
pub const PARAMS_PER_COMPONENT: usize = DIM + 1 + DIM + N_OFF_DIAG;

/// Bound applied to every log-diagonal entry.
pub const LOG_DIAG_BOUND: f64 = 10.0;

/// Row-major positions of the stored off-diagonal entries `(u12, u13, u14, u23, u24, u34)`.
pub const OFF_DIAG_INDEX: [(usize, usize); N_OFF_DIAG] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Box coordinates `[x1, y1, x2, y2]` relative to the RoI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxVector(pub [f64; DIM]);

impl BoxVector {
    pub fn new(coords: [f64; DIM]) -> Result<Self> {
        if coords.iter().all(|c| c.is_finite()) {
            Ok(BoxVector(coords))
        } else {
            Err(invalid(format!("non-finite box coordinates {coords:?}")))
        }
    }

    pub const fn zeros() -> Self {
        BoxVector([0.0; DIM])
    }

    #[inline]
    pub fn coords(&self) -> &[f64; DIM] {
        &self.0
    }

    /// `self - other`, coordinate-wise.
    #[inline]
    pub fn residual(&self, other: &BoxVector) -> [f64; DIM] {
        core::array::from_fn(|j| self.0[j] - other.0[j])
    }

    /// Swaps `x1/x2` and `y1/y2` where they are inverted.
    pub fn ordered(&self) -> [f64; DIM] {
        let [x1, y1, x2, y2] = self.0;
        [x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)]
    }
}

impl From<[f64; DIM]> for BoxVector {
    fn from(coords: [f64; DIM]) -> Self {
        BoxVector(coords)
    }
}

/// Upper-triangular Cholesky factor `U` of a precision matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFactor {
    log_diag: [f64; DIM],
    off_diag: [f64; N_OFF_DIAG],
}

impl CholeskyFactor {
    /// Builds a factor, clamping the log-diagonal to `[-LOG_DIAG_BOUND, LOG_DIAG_BOUND]`.
    pub fn new(log_diag: [f64; DIM], off_diag: [f64; N_OFF_DIAG]) -> Result<Self> {
        if !log_diag.iter().chain(off_diag.iter()).all(|v| v.is_finite()) {
            return Err(invalid("non-finite Cholesky factor entry"));
        }
        Ok(Self::clamped(log_diag, off_diag))
    }

    pub(crate) fn clamped(log_diag: [f64; DIM], off_diag: [f64; N_OFF_DIAG]) -> Self {
        CholeskyFactor {
            log_diag: log_diag.map(|u| u.clamp(-LOG_DIAG_BOUND, LOG_DIAG_BOUND)),
            off_diag,
        }
    }

    pub const fn identity() -> Self {
        CholeskyFactor {
            log_diag: [0.0; DIM],
            off_diag: [0.0; N_OFF_DIAG],
        }
    }

    pub fn diagonal(log_diag: [f64; DIM]) -> Result<Self> {
        Self::new(log_diag, [0.0; N_OFF_DIAG])
    }

    #[inline]
    pub fn log_diag(&self) -> &[f64; DIM] {
        &self.log_diag
    }

    #[inline]
    pub fn off_diag(&self) -> &[f64; N_OFF_DIAG] {
        &self.off_diag
    }

    /// `exp(u_ii)` for each diagonal position.
    pub fn diag(&self) -> [f64; DIM] {
        self.log_diag.map(math::exp)
    }

    pub fn is_diagonal(&self) -> bool {
        self.off_diag.iter().all(|&v| v == 0.0)
    }

    /// Materialized `U`.
    pub fn upper(&self) -> [[f64; DIM]; DIM] {
        let mut u = [[0.0; DIM]; DIM];
        for (i, d) in self.diag().into_iter().enumerate() {
            u[i][i] = d;
        }
        for (&(r, c), &v) in OFF_DIAG_INDEX.iter().zip(&self.off_diag) {
            u[r][c] = v;
        }
        u
    }

    /// `U v`.
    pub fn apply(&self, v: &[f64; DIM]) -> [f64; DIM] {
        let u = self.upper();
        core::array::from_fn(|i| (i..DIM).map(|j| u[i][j] * v[j]).sum())
    }

    /// `Uᵀ v`.
    pub fn apply_transpose(&self, v: &[f64; DIM]) -> [f64; DIM] {
        let u = self.upper();
        core::array::from_fn(|j| (0..=j).map(|i| u[i][j] * v[i]).sum())
    }

    /// Solves `U y = v` by back-substitution.
    pub fn solve(&self, v: &[f64; DIM]) -> [f64; DIM] {
        let u = self.upper();
        let mut y = [0.0; DIM];
        for i in (0..DIM).rev() {
            let tail: f64 = ((i + 1)..DIM).map(|j| u[i][j] * y[j]).sum();
            y[i] = (v[i] - tail) / u[i][i];
        }
        y
    }

    /// `Uᵀ U`.
    pub fn precision(&self) -> [[f64; DIM]; DIM] {
        let u = self.upper();
        core::array::from_fn(|r| core::array::from_fn(|c| (0..=r.min(c)).map(|k| u[k][r] * u[k][c]).sum()))
    }
}

impl Default for CholeskyFactor {
    fn default() -> Self {
        Self::identity()
    }
}

/// Predicted mixture for one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    means: Vec<BoxVector>,
    factors: Vec<CholeskyFactor>,
    weight_logits: Vec<f64>,
}

impl MixtureParams {
    pub fn new(means: Vec<BoxVector>, factors: Vec<CholeskyFactor>, weight_logits: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(invalid("a mixture needs at least one component"));
        }
        if factors.len() != k || weight_logits.len() != k {
            return Err(invalid(format!(
                "component count mismatch: {} means, {} factors, {} logits",
                k,
                factors.len(),
                weight_logits.len()
            )));
        }
        if !weight_logits.iter().all(|z| z.is_finite()) {
            return Err(invalid("non-finite weight logit"));
        }
        if !means.iter().all(|m| m.0.iter().all(|c| c.is_finite())) {
            return Err(invalid("non-finite component mean"));
        }
        Ok(MixtureParams {
            means,
            factors,
            weight_logits,
        })
    }

    /// A single component with weight logit 0.
    pub fn single(mean: BoxVector, factor: CholeskyFactor) -> Self {
        MixtureParams {
            means: alloc::vec![mean],
            factors: alloc::vec![factor],
            weight_logits: alloc::vec![0.0],
        }
    }

    /// Parses the flat block layout `[means (4K) | logits (K) | log_diag (4K) | off_diag (6K)]`.
    ///
    /// Log-diagonal entries are clamped.
    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self> {
        if k == 0 {
            return Err(invalid("a mixture needs at least one component"));
        }
        let expected = k * PARAMS_PER_COMPONENT;
        if flat.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: flat.len(),
            });
        }
        let (means, rest) = flat.split_at(DIM * k);
        let (logits, rest) = rest.split_at(k);
        let (log_diag, off_diag) = rest.split_at(DIM * k);
        let means = means
            .chunks_exact(DIM)
            .map(|c| BoxVector::new([c[0], c[1], c[2], c[3]]))
            .collect::<Result<Vec<_>>>()?;
        let factors = log_diag
            .chunks_exact(DIM)
            .zip(off_diag.chunks_exact(N_OFF_DIAG))
            .map(|(d, o)| CholeskyFactor::new([d[0], d[1], d[2], d[3]], [o[0], o[1], o[2], o[3], o[4], o[5]]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(means, factors, logits.to_vec())
    }

    /// Inverse of [`MixtureParams::from_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k() * PARAMS_PER_COMPONENT);
        out.extend(self.means.iter().flat_map(|m| m.0));
        out.extend_from_slice(&self.weight_logits);
        out.extend(self.factors.iter().flat_map(|f| f.log_diag));
        out.extend(self.factors.iter().flat_map(|f| f.off_diag));
        out
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[BoxVector] {
        &self.means
    }

    pub fn factors(&self) -> &[CholeskyFactor] {
        &self.factors
    }

    pub fn weight_logits(&self) -> &[f64] {
        &self.weight_logits
    }

    /// Mixture weights `φ = softmax(z)`.
    pub fn weights(&self) -> Vec<f64> {
        math::softmax(&self.weight_logits)
    }

    pub fn log_weights(&self) -> Vec<f64> {
        math::log_softmax(&self.weight_logits)
    }

    /// Same parameters with component order permuted: output component `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(Error::Shape {
                expected: self.k(),
                actual: perm.len(),
            });
        }
        let mut seen = alloc::vec![false; self.k()];
        for &p in perm {
            if p >= self.k() || core::mem::replace(&mut seen[p], true) {
                return Err(invalid("not a permutation"));
            }
        }
        Ok(MixtureParams {
            means: perm.iter().map(|&p| self.means[p]).collect(),
            factors: perm.iter().map(|&p| self.factors[p]).collect(),
            weight_logits: perm.iter().map(|&p| self.weight_logits[p]).collect(),
        })
    }

    /// Replaces every factor, keeping means and weights.
    pub fn with_factors(&self, factors: Vec<CholeskyFactor>) -> Result<Self> {
        Self::new(self.means.clone(), factors, self.weight_logits.clone())
    }
}

/// Which specialization of the full model a loss is evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossVariant {
    /// K components, full covariance.
    FullMixture,
    /// One component, full covariance.
    MultivariateGaussian,
    /// K components, diagonal covariance.
    DiagonalMixture,
    /// One component, diagonal covariance.
    DiagonalGaussian,
    /// One component, identity covariance.
    Euclidean,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::FullMixture,
        LossVariant::MultivariateGaussian,
        LossVariant::DiagonalMixture,
        LossVariant::DiagonalGaussian,
        LossVariant::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::FullMixture => "full-mixture",
            LossVariant::MultivariateGaussian => "multivariate-gaussian",
            LossVariant::DiagonalMixture => "diagonal-mixture",
            LossVariant::DiagonalGaussian => "diagonal-gaussian",
            LossVariant::Euclidean => "euclidean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn single_component(self) -> bool {
        !matches!(self, LossVariant::FullMixture | LossVariant::DiagonalMixture)
    }

    pub fn learns_off_diag(self) -> bool {
        matches!(self, LossVariant::FullMixture | LossVariant::MultivariateGaussian)
    }

    pub fn learns_log_diag(self) -> bool {
        self != LossVariant::Euclidean
    }

    /// Checks a component count against the variant.
    pub fn check_k(self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(invalid("a mixture needs at least one component"));
        }
        if self.single_component() && k != 1 {
            return Err(Error::Structure {
                variant: self.name(),
                reason: format!("requires exactly one component, got {k}"),
            });
        }
        Ok(())
    }

    /// Checks the structural constraints the variant places on `params`.
    pub fn validate(self, params: &MixtureParams) -> Result<()> {
        self.check_k(params.k())?;
        if !self.learns_off_diag() && !params.factors.iter().all(|f| f.is_diagonal()) {
            return Err(Error::Structure {
                variant: self.name(),
                reason: "off-diagonal Cholesky entries must be zero".into(),
            });
        }
        if !self.learns_log_diag()
            && !params
                .factors
                .iter()
                .all(|f| f.log_diag.iter().all(|&u| u == 0.0))
        {
            return Err(Error::Structure {
                variant: self.name(),
                reason: "log-diagonal entries must be zero".into(),
            });
        }
        Ok(())
    }

    /// Zeroes the entries the variant holds fixed.
    pub fn project(self, params: &mut MixtureParams) {
        for f in &mut params.factors {
            if !self.learns_off_diag() {
                f.off_diag = [0.0; N_OFF_DIAG];
            }
            if !self.learns_log_diag() {
                f.log_diag = [0.0; DIM];
            }
        }
    }

    /// Whether the scalar at `index` of the flat layout is a free parameter.
    pub(crate) fn is_free(self, k: usize, index: usize) -> bool {
        let means_end = DIM * k;
        let logits_end = means_end + k;
        let log_diag_end = logits_end + DIM * k;
        if index < means_end {
            true
        } else if index < logits_end {
            !self.single_component()
        } else if index < log_diag_end {
            self.learns_log_diag()
        } else {
            self.learns_off_diag()
        }
    }
}

impl core::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Softmax of the weight logits.
pub fn mixture_weights(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(invalid("a mixture needs at least one component"));
    }
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(invalid(format!("non-finite weight logit {z}")));
    }
    Ok(math::softmax(logits))
}

/// `ln |Σ| = -2 Σ u_ii`.
pub fn log_det_covariance(factor: &CholeskyFactor) -> f64 {
    -2.0 * factor.log_diag.iter().sum::<f64>()
}

/// `ln N(x; μ, (UᵀU)⁻¹) = -½‖U(x-μ)‖² + Σ u_ii - 2 ln 2π`.
pub fn component_log_density(x: &BoxVector, mean: &BoxVector, factor: &CholeskyFactor) -> f64 {
    let s = factor.apply(&x.residual(mean));
    let quad: f64 = s.iter().map(|v| v * v).sum();
    -0.5 * quad + factor.log_diag.iter().sum::<f64>() - TWO_LN_2PI
}

/// Per-component joint log terms `ln φ_i + ln N_i(x)`.
pub(crate) fn joint_log_terms(x: &BoxVector, params: &MixtureParams) -> Vec<f64> {
    params
        .log_weights()
        .into_iter()
        .zip(params.means.iter().zip(&params.factors))
        .map(|(lw, (m, f))| lw + component_log_density(x, m, f))
        .collect()
}

/// `ln Σ_i φ_i N_i(x)`, accumulated with log-sum-exp.
pub fn mixture_log_density(x: &BoxVector, params: &MixtureParams) -> f64 {
    math::log_sum_exp(&joint_log_terms(x, params))
}

/// Per-sample localization loss `-ln p(target)` under `variant`.
pub fn nll_loss(target: &BoxVector, params: &MixtureParams, variant: LossVariant) -> Result<f64> {
    variant.validate(params)?;
    Ok(-mixture_log_density(target, params))
}

/// Closed forms of the loss for each specialization, written out term by term.
///
/// These evaluate the specialized expressions directly rather than through the
/// mixture machinery, and are what [`nll_loss`] is checked against.
pub mod closed_form {
    use super::*;
    use crate::math::HALF_LN_2PI;

    /// One full-covariance Gaussian:
    /// `½ δᵀ UᵀU δ - Σ u_ii + 2 ln 2π` with `δ = target - μ`.
    pub fn multivariate_gaussian(target: &BoxVector, mean: &BoxVector, factor: &CholeskyFactor) -> f64 {
        let d = target.residual(mean);
        let p = factor.precision();
        let mut quad = 0.0;
        for r in 0..DIM {
            for c in 0..DIM {
                quad += d[r] * p[r][c] * d[c];
            }
        }
        quad / 2.0 - factor.log_diag.iter().sum::<f64>() + TWO_LN_2PI
    }

    /// Mixture of axis-aligned Gaussians; `diag[i][j]` is `(U_i)_jj`.
    ///
    /// `-ln Σ_i φ_i Π_j (U_i)_jj exp(-(U_i)_jj² δ_ij² / 2) / √(2π)`.
    pub fn diagonal_mixture(
        target: &BoxVector,
        means: &[BoxVector],
        diag: &[[f64; DIM]],
        weights: &[f64],
    ) -> f64 {
        let terms: Vec<f64> = means
            .iter()
            .zip(diag)
            .zip(weights)
            .map(|((m, u), &phi)| {
                let d = target.residual(m);
                let per_coord: f64 = (0..DIM)
                    .map(|j| math::ln(u[j]) - u[j] * u[j] * d[j] * d[j] / 2.0 - HALF_LN_2PI)
                    .sum();
                math::ln(phi) + per_coord
            })
            .collect();
        -math::log_sum_exp(&terms)
    }

    /// One axis-aligned Gaussian:
    /// `Σ_j [U_jj² δ_j² / 2 - ln U_jj + ln(2π)/2]`.
    pub fn diagonal_gaussian(target: &BoxVector, mean: &BoxVector, diag: &[f64; DIM]) -> f64 {
        let d = target.residual(mean);
        (0..DIM)
            .map(|j| diag[j] * diag[j] * d[j] * d[j] / 2.0 - math::ln(diag[j]) + HALF_LN_2PI)
            .sum()
    }

    /// Unit-covariance Gaussian: `Σ_j [δ_j² / 2 + ln(2π)/2]`.
    pub fn euclidean(target: &BoxVector, mean: &BoxVector) -> f64 {
        let d = target.residual(mean);
        (0..DIM).map(|j| d[j] * d[j] / 2.0 + HALF_LN_2PI).sum()
    }
}
