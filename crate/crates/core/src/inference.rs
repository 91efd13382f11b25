//! Decoding a predicted mixture into a single box, plus a mixture sampler.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distribution::{BoxVector, MixtureParams, DIM};
use crate::error::{invalid, Result};

/// Threshold used by probable inference unless configured otherwise.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    Average,
    Probable,
}

impl InferenceMode {
    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::Average => "average",
            InferenceMode::Probable => "probable",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "average" => Some(InferenceMode::Average),
            "probable" => Some(InferenceMode::Probable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    mode: InferenceMode,
    threshold_t: f64,
}

impl InferenceConfig {
    /// `threshold_t` must lie in `(0, 1)`.
    pub fn new(mode: InferenceMode, threshold_t: f64) -> Result<Self> {
        if !(threshold_t > 0.0 && threshold_t < 1.0) {
            return Err(invalid(alloc::format!(
                "probable-inference threshold must be in (0, 1), got {threshold_t}"
            )));
        }
        Ok(InferenceConfig { mode, threshold_t })
    }

    pub fn average() -> Self {
        InferenceConfig {
            mode: InferenceMode::Average,
            threshold_t: DEFAULT_THRESHOLD,
        }
    }

    pub fn probable(threshold_t: f64) -> Result<Self> {
        Self::new(InferenceMode::Probable, threshold_t)
    }

    pub fn mode(&self) -> InferenceMode {
        self.mode
    }

    pub fn threshold(&self) -> f64 {
        self.threshold_t
    }
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self::average()
    }
}

/// Where a decoded box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSource {
    /// Mixture expectation.
    Expectation,
    /// Mean of the given (0-based) component.
    Component(usize),
    /// Probable inference found no dominant component and fell back to the expectation.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    /// `[x1, y1, x2, y2]` with `x1 <= x2` and `y1 <= y2`.
    pub coords: [f64; DIM],
    pub source: BoxSource,
}

fn expectation(params: &MixtureParams) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    for (w, m) in params.weights().iter().zip(params.means()) {
        for (o, v) in out.iter_mut().zip(&m.0) {
            *o += w * v;
        }
    }
    out
}

/// `Σ φ_i μ_i`, order-normalized.
pub fn average_inference(params: &MixtureParams) -> DecodedBox {
    DecodedBox {
        coords: BoxVector(expectation(params)).ordered(),
        source: BoxSource::Expectation,
    }
}

/// Mean of the dominant component when its weight beats the runner-up by more
/// than `t`; otherwise the expectation, tagged [`BoxSource::Fallback`].
pub fn probable_inference(params: &MixtureParams, config: &InferenceConfig) -> DecodedBox {
    let phi = params.weights();
    if phi.len() == 1 {
        return DecodedBox {
            coords: params.means()[0].ordered(),
            source: BoxSource::Component(0),
        };
    }
    // Ties resolve to the lowest index.
    let mut best = 0;
    for (i, &p) in phi.iter().enumerate() {
        if p > phi[best] {
            best = i;
        }
    }
    let runner_up = phi
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    if phi[best] > runner_up + config.threshold() {
        DecodedBox {
            coords: params.means()[best].ordered(),
            source: BoxSource::Component(best),
        }
    } else {
        DecodedBox {
            coords: BoxVector(expectation(params)).ordered(),
            source: BoxSource::Fallback,
        }
    }
}

/// Dispatches on `config.mode()`.
pub fn decode(params: &MixtureParams, config: &InferenceConfig) -> DecodedBox {
    match config.mode() {
        InferenceMode::Average => average_inference(params),
        InferenceMode::Probable => probable_inference(params, config),
    }
}

/// Draws `n` boxes from the mixture.
///
/// Each draw picks a component by weight, then returns `μ + U⁻¹ z` with `z`
/// standard normal, so its covariance is `(UᵀU)⁻¹`.
pub fn sample_mixture(params: &MixtureParams, n: usize, seed: u64) -> Result<Vec<BoxVector>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = params.weights();
    let picker = WeightedIndex::new(&phi).map_err(|e| invalid(alloc::format!("{e}")))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let i = picker.sample(&mut rng);
        let z: [f64; DIM] = core::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let offset = params.factors()[i].solve(&z);
        let m = params.means()[i].0;
        out.push(BoxVector(core::array::from_fn(|j| m[j] + offset[j])));
    }
    Ok(out)
}
