//! Mini-batch momentum SGD on `L = L_cls + λ L_loc`.
//!
//! `L_cls` is binary cross-entropy of the objectness logit, averaged over the
//! batch. `L_loc` is the mixture NLL averaged over the batch's positives only;
//! a batch without positives contributes no localization term.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distribution::nll_loss;
use crate::error::{invalid, Error, Result};
use crate::gradient::grad_nll;
use crate::head::{HeadGradient, HeadModel};
use crate::math::{bce_with_logit, sigmoid};
use crate::synthetic::ToySample;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda_loc: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            lambda_loc: 1.0,
            batch_size: 64,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must be in [0, 1)"));
        }
        if !(self.lambda_loc > 0.0 && self.lambda_loc.is_finite()) {
            return Err(invalid("lambda_loc must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        Ok(())
    }
}

/// Loss of one batch (or the per-sample mean over an epoch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLoss {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
}

/// Loss and gradient of `L_cls + λ L_loc` over `batch`.
pub fn batch_gradient(
    model: &HeadModel,
    batch: &[&ToySample],
    lambda_loc: f64,
) -> Result<(EpochLoss, HeadGradient, usize)> {
    let variant = model.config().loss_variant;
    let n = batch.len() as f64;
    let positives = batch.iter().filter(|s| s.objectness).count();
    let loc_scale = if positives > 0 {
        lambda_loc / positives as f64
    } else {
        0.0
    };
    let mut grads = model.zero_gradient();
    let mut cls = 0.0;
    let mut loc = 0.0;
    for sample in batch {
        let cache = model.forward_cached(&sample.feature)?;
        let raw = cache.output();
        if !raw.iter().all(|v| v.is_finite()) {
            // Diverged weights: the loss of this batch is undefined.
            let nan = EpochLoss {
                total: f64::NAN,
                cls: f64::NAN,
                loc: f64::NAN,
            };
            return Ok((nan, grads, positives));
        }
        let out = model.parse_output(raw)?;
        let label = f64::from(u8::from(sample.objectness));
        cls += bce_with_logit(out.objectness_logit, label);
        let d_obj = (sigmoid(out.objectness_logit) - label) / n;
        let param_grad = match (sample.objectness, &sample.target) {
            (true, Some(target)) => {
                loc += nll_loss(target, &out.params, variant)?;
                grad_nll(target, &out.params, variant)?
            }
            (true, None) => return Err(invalid("positive sample without a target")),
            (false, _) => crate::gradient::ParamGradient::zeros(out.params.k()),
        };
        let d_raw = model.raw_output_gradient(raw, &out.params, &param_grad, loc_scale, d_obj);
        model.backward(&cache, d_raw, &mut grads);
    }
    let cls = cls / n;
    let loc = if positives > 0 {
        loc / positives as f64
    } else {
        0.0
    };
    Ok((
        EpochLoss {
            total: cls + lambda_loc * loc,
            cls,
            loc,
        },
        grads,
        positives,
    ))
}

/// Heavy-ball momentum: `v ← m v + g`, `θ ← θ - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(model: &HeadModel, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: alloc::vec![0.0; model.n_params()],
        }
    }

    pub fn step(&mut self, model: &mut HeadModel, grads: &HeadGradient) {
        for ((p, v), g) in model.params_mut().zip(&mut self.velocity).zip(grads.iter()) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
    }
}

/// Trains `model` on `data`; returns it with the per-epoch loss trace.
///
/// Each trace entry is the per-sample epoch mean: `cls` over all samples,
/// `loc` over positives, `total = cls + λ loc`.
pub fn train(
    mut model: HeadModel,
    data: &[ToySample],
    config: &TrainConfig,
) -> Result<(HeadModel, Vec<EpochLoss>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in data {
        s.validate()?;
    }
    let total_positives = data.iter().filter(|s| s.objectness).count();
    if total_positives == 0 {
        return Err(Error::NoPositiveSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut sgd = Sgd::new(&model, config.learning_rate, config.momentum);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut cls_sum = 0.0;
        let mut loc_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ToySample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads, positives) = batch_gradient(&model, &batch, config.lambda_loc)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            cls_sum += loss.cls * batch.len() as f64;
            loc_sum += loss.loc * positives as f64;
            sgd.step(&mut model, &grads);
        }
        if !model.is_finite() {
            return Err(Error::NonFiniteModel { epoch });
        }
        let cls = cls_sum / data.len() as f64;
        let loc = loc_sum / total_positives as f64;
        trace.push(EpochLoss {
            total: cls + config.lambda_loc * loc,
            cls,
            loc,
        });
    }
    Ok((model, trace))
}
