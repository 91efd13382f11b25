use boxmix_core::head::Dense;
use boxmix_core::{generate, Error, HeadConfig, HeadModel, LossVariant, Scenario, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn configs() -> Vec<HeadConfig> {
    let mut out = Vec::new();
    for variant in LossVariant::ALL {
        let ks: &[usize] = if variant.single_component() {
            &[1]
        } else {
            &[1, 2, 4, 8]
        };
        for &k in ks {
            out.push(HeadConfig {
                k_components: k,
                loss_variant: variant,
                ..Default::default()
            });
        }
    }
    out.push(HeadConfig {
        feature_dim: 7,
        hidden_dims: vec![],
        ..Default::default()
    });
    out.push(HeadConfig {
        feature_dim: 10,
        hidden_dims: vec![128, 16, 16],
        k_components: 3,
        ..Default::default()
    });
    out
}

#[test]
fn fresh_head_is_unbiased_with_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = generate(&ScenarioConfig::new(Scenario::BimodalBorder, 50, 1)).unwrap();
    for config in configs() {
        for seed in 0..3 {
            let model = HeadModel::init(config.clone(), seed).unwrap();
            let k = config.k_components as f64;
            let mut features = vec![vec![0.0; config.feature_dim]];
            features.push(
                (0..config.feature_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            );
            features.push(
                (0..config.feature_dim)
                    .map(|_| rng.random_range(-10.0..10.0))
                    .collect(),
            );
            if config.feature_dim == 32 {
                features.extend(data.iter().map(|s| s.feature.clone()));
            }
            for f in &features {
                let out = model.forward(f).unwrap();
                for m in out.params.means() {
                    assert!(m.0.iter().all(|v| v.abs() < 1e-2));
                }
                for u in out.params.factors() {
                    assert!(u.log_diag().iter().all(|v| v.abs() < 1e-2));
                }
                for w in out.params.weights() {
                    assert!((w - 1.0 / k).abs() < 1e-3);
                }
            }
        }
    }
}

#[test]
fn init_blocks_follow_contract() {
    let config = HeadConfig {
        k_components: 4,
        ..Default::default()
    };
    let model = HeadModel::init(config.clone(), 9).unwrap();
    let out = model.layers().last().unwrap();
    let k = 4;
    for (i, b) in out.bias.iter().enumerate() {
        let expected = if (4 * k..5 * k).contains(&i) { -1.0 } else { 0.0 };
        assert_eq!(*b, expected, "bias {i}");
    }
    let std_of = |w: &[f64]| (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
    assert!((std_of(&out.weights) / 1e-4 - 1.0).abs() < 0.05);
    for hidden in &model.layers()[..2] {
        assert!((std_of(&hidden.weights) / 1e-2 - 1.0).abs() < 0.05);
        assert!(hidden.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let c = HeadConfig::default();
    assert_eq!(
        HeadModel::init(c.clone(), 4).unwrap(),
        HeadModel::init(c.clone(), 4).unwrap()
    );
    let (a, b) = (
        HeadModel::init(c.clone(), 4).unwrap(),
        HeadModel::init(c, 5).unwrap(),
    );
    assert_ne!(a.layers()[0].weights, b.layers()[0].weights);
}

fn random_model(config: HeadConfig, seed: u64) -> HeadModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| {
            let mut d = Dense::zeros(i, o);
            d.weights
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-0.3..0.3));
            d.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            d
        })
        .collect();
    HeadModel::from_layers(config, layers).unwrap()
}

#[test]
fn parsed_output_reserializes_to_raw() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (i, config) in configs().into_iter().enumerate() {
        let model = random_model(config.clone(), i as u64);
        let variant = config.loss_variant;
        for _ in 0..20 {
            let f: Vec<f64> = (0..config.feature_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let raw = model.forward_raw(&f).unwrap();
            assert_eq!(raw.len(), 15 * config.k_components + 1);
            let out = model.forward(&f).unwrap();
            let back = model.raw_from_output(&out);
            let k = config.k_components;
            for (j, (a, b)) in raw.iter().zip(&back).enumerate() {
                let fixed = (j >= 5 * k && j < 9 * k && !variant.learns_log_diag())
                    || (j >= 9 * k && j < 15 * k && !variant.learns_off_diag());
                if fixed {
                    assert_eq!(*b, 0.0);
                } else {
                    assert!((a - b).abs() < 1e-12, "{variant} K={k} index {j}: {a} vs {b}");
                }
            }
            assert_eq!(model.parse_output(&back).unwrap(), out);
        }
    }
}

#[test]
fn rejects_wrong_shapes() {
    let model = HeadModel::init(HeadConfig::default(), 0).unwrap();
    assert_eq!(
        model.forward(&[0.0; 31]).unwrap_err(),
        Error::Shape {
            expected: 32,
            actual: 31
        }
    );
    assert!(model.parse_output(&[0.0; 5]).is_err());
    let bad = HeadConfig {
        k_components: 2,
        loss_variant: LossVariant::Euclidean,
        ..Default::default()
    };
    assert!(matches!(HeadModel::init(bad, 0), Err(Error::Structure { .. })));
    let c = HeadConfig {
        feature_dim: 3,
        hidden_dims: vec![],
        k_components: 1,
        ..Default::default()
    };
    assert!(HeadModel::from_layers(c.clone(), vec![Dense::zeros(3, 15)]).is_err());
    assert!(HeadModel::from_layers(c, vec![Dense::zeros(3, 16)]).is_ok());
}

#[test]
fn forward_is_deterministic() {
    let model = random_model(HeadConfig::default(), 3);
    let f: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    assert_eq!(model.forward(&f).unwrap(), model.forward(&f).unwrap());
}
