//! Backpropagation through the head against central differences of the batch loss.

use boxmix_core::head::{Dense, HeadConfig, HeadModel};
use boxmix_core::train::batch_gradient;
use boxmix_core::{BoxVector, LossVariant, ToySample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturbed(model: &HeadModel, layer: usize, index: usize, delta: f64) -> HeadModel {
    let mut layers: Vec<Dense> = model.layers().to_vec();
    let n_w = layers[layer].weights.len();
    if index < n_w {
        layers[layer].weights[index] += delta;
    } else {
        layers[layer].bias[index - n_w] += delta;
    }
    HeadModel::from_layers(model.config().clone(), layers).unwrap()
}

fn random_model(config: HeadConfig, rng: &mut ChaCha8Rng) -> HeadModel {
    let shapes = config.layer_shapes();
    let layers = shapes
        .iter()
        .map(|&(i, o)| {
            let mut d = Dense::zeros(i, o);
            d.weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-0.4..0.4));
            d.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            d
        })
        .collect();
    HeadModel::from_layers(config, layers).unwrap()
}

fn check(variant: LossVariant, k: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = HeadConfig {
        feature_dim: 5,
        hidden_dims: vec![6],
        k_components: k,
        loss_variant: variant,
    };
    let model = random_model(config, &mut rng);
    let mut samples = Vec::new();
    for i in 0..4 {
        let feature: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        if i == 3 {
            samples.push(ToySample::negative(feature));
        } else {
            let t = BoxVector(core::array::from_fn(|_| rng.random_range(-0.5..0.5)));
            samples.push(ToySample::positive(feature, t, None));
        }
    }
    let batch: Vec<&ToySample> = samples.iter().collect();
    let lambda = 0.7;
    let (_, grads, _) = batch_gradient(&model, &batch, lambda).unwrap();
    let h = 1e-6;
    for (l, g) in grads.layers.iter().enumerate() {
        let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
        for (idx, &a) in analytic.iter().enumerate() {
            let up = batch_gradient(&perturbed(&model, l, idx, h), &batch, lambda)
                .unwrap()
                .0
                .total;
            let down = batch_gradient(&perturbed(&model, l, idx, -h), &batch, lambda)
                .unwrap()
                .0
                .total;
            let fd = (up - down) / (2.0 * h);
            let err = (a - fd).abs();
            assert!(
                err < 1e-6 || err / fd.abs().max(a.abs()) < 1e-5,
                "{variant} k={k} layer {l} param {idx}: analytic {a} vs fd {fd}"
            );
        }
    }
}

#[test]
fn backprop_matches_finite_differences() {
    for (s, variant) in LossVariant::ALL.into_iter().enumerate() {
        let k = if variant.single_component() { 1 } else { 3 };
        for seed in 0..3 {
            check(variant, k, 100 * s as u64 + seed);
        }
    }
}
