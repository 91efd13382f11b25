//! Fully-connected head mapping an RoI feature vector to mixture parameters
//! and an objectness logit.
//!
//! The output layer is laid out in blocks:
//! `[means (4K) | weight logits (K) | log-diagonal (4K) | off-diagonal (6K) | objectness (1)]`.
//!
//! Mean outputs pass through a fixed gain [`MEAN_OUTPUT_SCALE`], the analogue
//! of box-delta regression weights: RoI-relative targets with noise near 0.02
//! give precisions in the thousands, and the gain keeps the curvature seen by
//! the mean outputs within reach of the default learning rate.
//!
//! Off-diagonal outputs are relative to their row's diagonal: the head emits
//! `o_ab` and the factor entry is `u_ab = exp(log_diag_a) o_ab`, so `U = D (I + O)`.
//! A correlation `ρ` between two coordinates then needs `o ≈ -ρ/sqrt(1-ρ²)`
//! whatever the noise scale, where the raw entry would need that divided by σ.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::distribution::{
    CholeskyFactor, LossVariant, MixtureParams, DIM, LOG_DIAG_BOUND, N_OFF_DIAG, OFF_DIAG_INDEX,
    PARAMS_PER_COMPONENT,
};
use crate::error::{invalid, Error, Result};
use crate::gradient::ParamGradient;

/// Init std of hidden-layer weights.
pub const HIDDEN_INIT_STD: f64 = 0.01;
/// Init std of output-layer weights.
pub const OUTPUT_INIT_STD: f64 = 1e-4;
/// Gain applied to the mean outputs: `μ = MEAN_OUTPUT_SCALE * raw`.
pub const MEAN_OUTPUT_SCALE: f64 = 0.3;
/// Init bias of the weight-logit outputs.
pub const LOGIT_INIT_BIAS: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub k_components: usize,
    pub loss_variant: LossVariant,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            feature_dim: 32,
            hidden_dims: vec![64, 64],
            k_components: 8,
            loss_variant: LossVariant::FullMixture,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        self.loss_variant.check_k(self.k_components)
    }

    /// `15 K + 1`.
    pub fn output_dim(&self) -> usize {
        self.k_components * PARAMS_PER_COMPONENT + 1
    }

    /// `(inputs, outputs)` of every layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.feature_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Dense layer `y = W x + b`, `W` row-major with shape `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parsed head output for one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub params: MixtureParams,
    pub objectness_logit: f64,
}

/// Per-layer gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub layers: Vec<Dense>,
}

impl HeadGradient {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    config: HeadConfig,
    layers: Vec<Dense>,
}

pub(crate) struct Activations {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (after the rectifier for hidden layers, raw for the last).
    acts: Vec<Vec<f64>>,
}

impl Activations {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

impl HeadModel {
    /// Random init: hidden weights `N(0, 0.01²)`, output weights `N(0, 1e-4²)`,
    /// output biases 0 except the weight logits at -1.
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Normal::new(0.0, HIDDEN_INIT_STD).expect("valid std");
        let output = Normal::new(0.0, OUTPUT_INIT_STD).expect("valid std");
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, &(inputs, outputs)) in shapes.iter().enumerate() {
            let dist = if l == last { &output } else { &hidden };
            let mut layer = Dense::zeros(inputs, outputs);
            for w in &mut layer.weights {
                *w = dist.sample(&mut rng);
            }
            layers.push(layer);
        }
        let k = config.k_components;
        let logits = DIM * k..(DIM + 1) * k;
        for b in &mut layers[last].bias[logits] {
            *b = LOGIT_INIT_BIAS;
        }
        Ok(HeadModel { config, layers })
    }

    /// Wraps explicit layers after checking them against `config`.
    pub fn from_layers(config: HeadConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Shape {
                expected: shapes.len(),
                actual: layers.len(),
            });
        }
        for (&(inputs, outputs), layer) in shapes.iter().zip(&layers) {
            if layer.inputs != inputs || layer.outputs != outputs {
                return Err(Error::Shape {
                    expected: inputs * outputs,
                    actual: layer.inputs * layer.outputs,
                });
            }
            if layer.weights.len() != inputs * outputs || layer.bias.len() != outputs {
                return Err(Error::Shape {
                    expected: inputs * outputs + outputs,
                    actual: layer.weights.len() + layer.bias.len(),
                });
            }
        }
        Ok(HeadModel { config, layers })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Dense::params).all(|v| v.is_finite())
    }

    pub fn zero_gradient(&self) -> HeadGradient {
        HeadGradient {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.config.feature_dim {
            return Err(Error::Shape {
                expected: self.config.feature_dim,
                actual: feature.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, feature: &[f64]) -> Result<Activations> {
        self.check_feature(feature)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(feature.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().expect("input pushed"));
            if l != last {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
        }
        Ok(Activations { acts })
    }

    /// Raw output vector of length `15 K + 1`.
    pub fn forward_raw(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(feature)?.acts.pop().expect("output"))
    }

    pub fn forward(&self, feature: &[f64]) -> Result<HeadOutput> {
        let raw = self.forward_raw(feature)?;
        self.parse_output(&raw)
    }

    /// Splits a raw output into mixture parameters and objectness.
    ///
    /// Means are scaled by [`MEAN_OUTPUT_SCALE`], log-diagonals are clamped,
    /// off-diagonals are scaled by their row's diagonal, and entries the loss
    /// variant holds fixed are zeroed.
    pub fn parse_output(&self, raw: &[f64]) -> Result<HeadOutput> {
        let dim = self.config.output_dim();
        if raw.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: raw.len(),
            });
        }
        let k = self.config.k_components;
        let mut flat = raw[..dim - 1].to_vec();
        flat[..DIM * k].iter_mut().for_each(|v| *v *= MEAN_OUTPUT_SCALE);
        let relative = MixtureParams::from_flat(k, &flat)?;
        let factors = relative
            .factors()
            .iter()
            .map(|f| {
                let diag = f.diag();
                let mut off = *f.off_diag();
                for (v, &(a, _)) in off.iter_mut().zip(&OFF_DIAG_INDEX) {
                    *v *= diag[a];
                }
                CholeskyFactor::new(*f.log_diag(), off)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut params = relative.with_factors(factors)?;
        self.config.loss_variant.project(&mut params);
        Ok(HeadOutput {
            params,
            objectness_logit: raw[dim - 1],
        })
    }

    /// Raw output that parses to `out`; inverse of [`parse_output`](Self::parse_output)
    /// for unclamped, projected outputs.
    pub fn raw_from_output(&self, out: &HeadOutput) -> Vec<f64> {
        let factors: Vec<CholeskyFactor> = out
            .params
            .factors()
            .iter()
            .map(|f| {
                let diag = f.diag();
                let mut off = *f.off_diag();
                for (v, &(a, _)) in off.iter_mut().zip(&OFF_DIAG_INDEX) {
                    *v /= diag[a];
                }
                CholeskyFactor::clamped(*f.log_diag(), off)
            })
            .collect();
        let mut raw = out
            .params
            .with_factors(factors)
            .expect("same shape as a valid mixture")
            .to_flat();
        let k = self.config.k_components;
        raw[..DIM * k].iter_mut().for_each(|v| *v /= MEAN_OUTPUT_SCALE);
        raw.push(out.objectness_logit);
        raw
    }

    /// Maps a parameter gradient back onto the raw outputs.
    ///
    /// Applies the chain rule through the relative off-diagonals and zeroes
    /// log-diagonal outputs that were clamped.
    pub(crate) fn raw_output_gradient(
        &self,
        raw: &[f64],
        params: &MixtureParams,
        grad: &ParamGradient,
        scale: f64,
        d_objectness: f64,
    ) -> Vec<f64> {
        let k = self.config.k_components;
        let mut grad = grad.clone();
        for d in &mut grad.d_means {
            d.iter_mut().for_each(|v| *v *= MEAN_OUTPUT_SCALE);
        }
        for (i, f) in params.factors().iter().enumerate() {
            let diag = f.diag();
            for (n, &(a, _)) in OFF_DIAG_INDEX.iter().enumerate() {
                let d_u = grad.d_off_diag[i][n];
                grad.d_log_diag[i][a] += d_u * f.off_diag()[n];
                grad.d_off_diag[i][n] = d_u * diag[a];
            }
        }
        let mut d = grad.to_flat();
        let log_diag = (DIM + 1) * k..(2 * DIM + 1) * k;
        for i in log_diag {
            if raw[i].abs() > LOG_DIAG_BOUND {
                d[i] = 0.0;
            }
        }
        for v in &mut d {
            *v *= scale;
        }
        d.push(d_objectness);
        debug_assert_eq!(d.len(), k * (DIM + 1 + DIM + N_OFF_DIAG) + 1);
        d
    }

    /// Accumulates `∂loss/∂θ` into `grads` given `∂loss/∂output`.
    pub(crate) fn backward(&self, cache: &Activations, d_out: Vec<f64>, grads: &mut HeadGradient) {
        let mut delta = d_out;
        for l in (0..self.layers.len()).rev() {
            let input = &cache.acts[l];
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            for (o, &dv) in delta.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += dv * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &dv) in delta.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * dv;
                }
            }
            // Rectifier derivative, read off the layer's own (post-activation) output.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }
}
