//! Synthetic occlusion scenarios.
//!
//! Every positive sample starts from a base box with a random centre and height
//! and a fixed width [`BASE_WIDTH`]. The target is the base box plus scenario
//! noise; the feature carries the *base* coordinates that are visible, so the
//! noise itself is never observable and `p(target | feature)` is known in
//! closed form.
//!
//! Feature layout (length `feature_dim`):
//!
//! | slots | content |
//! |-------|---------|
//! | 0..4  | visible base coordinates `x1, y1, x2, y2`, encoded as `FEATURE_SCALE (c - BASE_MEAN)` (0 where hidden) |
//! | 4, 5  | occlusion indicator, one-hot `[visible, occluded]` |
//! | 6..   | distractors, uniform in `[-0.5, 0.5)` |
//!
//! Occluded samples never expose `x1`; it is recoverable only as `x2 - BASE_WIDTH`.
//!
//! Target noise is `N(0, noise_std²)` per coordinate except where a scenario
//! says otherwise:
//!
//! - bimodal: occluded `x1` is shifted by `±mode_gap / 2` with equal odds;
//! - correlated: `x1`/`x2` noise of *every* positive has correlation `ρ`;
//! - heavy: occluded noise is `HEAVY_NOISE_FACTOR` times larger and the
//!   coordinate encodings are scaled down to `HEAVY_SIGNAL`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distribution::{BoxVector, DIM};
use crate::error::{invalid, Error, Result};
use crate::math::{self, HALF_LN_2PI};

pub const BASE_WIDTH: f64 = 0.5;
pub const CENTER_RANGE: (f64, f64) = (0.4, 0.6);
pub const HEIGHT_RANGE: (f64, f64) = (0.4, 0.6);
/// Expected base box; feature encodings are centred on it.
pub const BASE_MEAN: [f64; DIM] = [0.25, 0.25, 0.75, 0.75];
/// Gain of the coordinate encodings, bringing them to roughly `[-0.5, 0.5]`.
pub const FEATURE_SCALE: f64 = 5.0;
/// Noise multiplier of the heavy-occlusion scenario.
pub const HEAVY_NOISE_FACTOR: f64 = 5.0;
/// Amplitude of the coordinate encodings under heavy occlusion.
pub const HEAVY_SIGNAL: f64 = 0.2;
pub const VISIBLE_SLOT: usize = 4;
pub const OCCLUDED_SLOT: usize = 5;
pub const MIN_FEATURE_DIM: usize = 6;
/// Fresh draws used by [`analytic_nll`].
pub const ANALYTIC_SAMPLES: usize = 100_000;
/// Smallest noise level for which [`analytic_nll`] is defined.
pub const MIN_ANALYTIC_NOISE: f64 = 1e-4;

const ANALYTIC_SEED_SALT: u64 = 0x5eed_a7a1_7c11_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Unimodal,
    BimodalBorder,
    CorrelatedBorders,
    HeavyOcclusion,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Unimodal,
        Scenario::BimodalBorder,
        Scenario::CorrelatedBorders,
        Scenario::HeavyOcclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Unimodal => "unimodal",
            Scenario::BimodalBorder => "bimodal",
            Scenario::CorrelatedBorders => "correlated",
            Scenario::HeavyOcclusion => "heavy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Positive samples; the same number of negatives is appended.
    pub n_samples: usize,
    pub noise_std: f64,
    /// Distance between the two `x1` modes (bimodal only).
    pub mode_gap: f64,
    /// Correlation of the `x1`/`x2` noise (correlated only).
    pub correlation_rho: f64,
    /// Fraction of positives that are occluded.
    pub occlusion_rate: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n_samples: usize, seed: u64) -> Self {
        ScenarioConfig {
            scenario,
            n_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_samples == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(alloc::format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !self.mode_gap.is_finite() {
            return bad(alloc::format!("mode_gap must be finite, got {}", self.mode_gap));
        }
        if !(self.correlation_rho > -1.0 && self.correlation_rho < 1.0) {
            return bad(alloc::format!(
                "correlation_rho must be in (-1, 1), got {}",
                self.correlation_rho
            ));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad(alloc::format!(
                "occlusion_rate must be in [0, 1], got {}",
                self.occlusion_rate
            ));
        }
        if self.feature_dim < MIN_FEATURE_DIM {
            return bad(alloc::format!(
                "feature_dim must be at least {MIN_FEATURE_DIM}, got {}",
                self.feature_dim
            ));
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Unimodal,
            n_samples: 1000,
            noise_std: 0.02,
            mode_gap: 0.3,
            correlation_rho: 0.8,
            occlusion_rate: 0.5,
            feature_dim: 32,
            seed: 0,
        }
    }
}

/// One labelled RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub feature: Vec<f64>,
    /// Ground-truth box; `None` for negatives.
    pub target: Option<BoxVector>,
    pub objectness: bool,
    /// Which `x1` mode generated the target (bimodal occluded positives only).
    pub latent_mode: Option<usize>,
}

impl ToySample {
    pub fn positive(feature: Vec<f64>, target: BoxVector, latent_mode: Option<usize>) -> Self {
        ToySample {
            feature,
            target: Some(target),
            objectness: true,
            latent_mode,
        }
    }

    pub fn negative(feature: Vec<f64>) -> Self {
        ToySample {
            feature,
            target: None,
            objectness: false,
            latent_mode: None,
        }
    }

    /// Checks that positives carry a finite target and negatives none.
    pub fn validate(&self) -> Result<()> {
        match (self.objectness, &self.target) {
            (true, Some(t)) if t.0.iter().all(|c| c.is_finite()) => Ok(()),
            (true, _) => Err(invalid("positive sample without a finite target")),
            (false, None) => Ok(()),
            (false, Some(_)) => Err(invalid("negative sample with a target")),
        }
    }

    /// Reads the occlusion indicator.
    pub fn is_occluded(&self) -> bool {
        self.objectness && self.feature.get(OCCLUDED_SLOT).copied() == Some(1.0)
    }
}

/// A positive draw together with what generated it.
struct Draw {
    sample: ToySample,
    base: [f64; DIM],
    occluded: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn distractors(rng: &mut ChaCha8Rng, feature: &mut [f64]) {
    for f in feature {
        *f = rng.random::<f64>() - 0.5;
    }
}

fn draw_positive(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Draw {
    let cx = uniform(rng, CENTER_RANGE);
    let cy = uniform(rng, CENTER_RANGE);
    let h = uniform(rng, HEIGHT_RANGE);
    let base = [
        cx - BASE_WIDTH / 2.0,
        cy - h / 2.0,
        cx + BASE_WIDTH / 2.0,
        cy + h / 2.0,
    ];
    let occluded = rng.random::<f64>() < config.occlusion_rate;
    let sigma = config.noise_std;
    let mut target = base;
    let mut latent_mode = None;
    let mut signal = 1.0;

    match config.scenario {
        // Correlated annotation noise applies to every positive; occlusion only
        // hides x1 from the feature.
        Scenario::CorrelatedBorders => {
            let rho = config.correlation_rho;
            let (z1, z2) = (normal(rng), normal(rng));
            target[0] += sigma * z1;
            target[2] += sigma * (rho * z1 + math::sqrt(1.0 - rho * rho) * z2);
            target[1] += sigma * normal(rng);
            target[3] += sigma * normal(rng);
        }
        Scenario::BimodalBorder if occluded => {
            let mode = usize::from(rng.random::<bool>());
            let shift = if mode == 0 { -0.5 } else { 0.5 } * config.mode_gap;
            target[0] += shift;
            latent_mode = Some(mode);
            for t in &mut target {
                *t += sigma * normal(rng);
            }
        }
        Scenario::HeavyOcclusion if occluded => {
            signal = HEAVY_SIGNAL;
            for t in &mut target {
                *t += HEAVY_NOISE_FACTOR * sigma * normal(rng);
            }
        }
        _ => {
            for t in &mut target {
                *t += sigma * normal(rng);
            }
        }
    }

    let mut feature = alloc::vec![0.0; config.feature_dim];
    for j in 0..DIM {
        if !(occluded && j == 0) {
            feature[j] = signal * FEATURE_SCALE * (base[j] - BASE_MEAN[j]);
        }
    }
    feature[if occluded { OCCLUDED_SLOT } else { VISIBLE_SLOT }] = 1.0;
    distractors(rng, &mut feature[MIN_FEATURE_DIM..]);

    Draw {
        sample: ToySample::positive(feature, BoxVector(target), latent_mode),
        base,
        occluded,
    }
}

/// Draws `n_samples` positives followed by as many pure-noise negatives.
pub fn generate(config: &ScenarioConfig) -> Result<Vec<ToySample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(2 * config.n_samples);
    for _ in 0..config.n_samples {
        out.push(draw_positive(config, &mut rng).sample);
    }
    for _ in 0..config.n_samples {
        let mut feature = alloc::vec![0.0; config.feature_dim];
        distractors(&mut rng, &mut feature);
        out.push(ToySample::negative(feature));
    }
    Ok(out)
}

fn gauss_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - math::ln(std) - HALF_LN_2PI
}

/// `ln p(target | base, occluded)` under the generator.
fn true_log_density(config: &ScenarioConfig, base: &[f64; DIM], occluded: bool, t: &[f64; DIM]) -> f64 {
    let sigma = config.noise_std;
    let independent = |std: f64| -> f64 { (0..DIM).map(|j| gauss_log_pdf(t[j], base[j], std)).sum() };
    match config.scenario {
        Scenario::CorrelatedBorders => {
            let rho = config.correlation_rho;
            let a = (t[0] - base[0]) / sigma;
            let b = (t[2] - base[2]) / sigma;
            let one_minus = 1.0 - rho * rho;
            let quad = (a * a - 2.0 * rho * a * b + b * b) / one_minus;
            let pair = -0.5 * quad - 2.0 * math::ln(sigma) - 0.5 * math::ln(one_minus) - 2.0 * HALF_LN_2PI;
            pair + gauss_log_pdf(t[1], base[1], sigma) + gauss_log_pdf(t[3], base[3], sigma)
        }
        Scenario::BimodalBorder if occluded => {
            let half = 0.5 * config.mode_gap;
            let x1 = math::log_sum_exp(&[
                math::ln(0.5) + gauss_log_pdf(t[0], base[0] - half, sigma),
                math::ln(0.5) + gauss_log_pdf(t[0], base[0] + half, sigma),
            ]);
            x1 + (1..DIM).map(|j| gauss_log_pdf(t[j], base[j], sigma)).sum::<f64>()
        }
        Scenario::HeavyOcclusion if occluded => independent(HEAVY_NOISE_FACTOR * sigma),
        _ => independent(sigma),
    }
}

/// Expected NLL of the generator's own conditional density, the floor for any
/// trained model, estimated over [`ANALYTIC_SAMPLES`] fresh positives.
pub fn analytic_nll(config: &ScenarioConfig) -> Result<f64> {
    config.validate()?;
    if config.noise_std < MIN_ANALYTIC_NOISE {
        return Err(Error::Config(alloc::format!(
            "analytic NLL needs noise_std >= {MIN_ANALYTIC_NOISE}, got {}",
            config.noise_std
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ANALYTIC_SEED_SALT);
    let mut total = 0.0;
    for _ in 0..ANALYTIC_SAMPLES {
        let d = draw_positive(config, &mut rng);
        let t = d.sample.target.expect("positive").0;
        total -= true_log_density(config, &d.base, d.occluded, &t);
    }
    Ok(total / ANALYTIC_SAMPLES as f64)
}

/// Base box the generator started from, recovered from a positive's feature.
pub fn base_box(config: &ScenarioConfig, sample: &ToySample) -> Option<[f64; DIM]> {
    if !sample.objectness || sample.feature.len() < MIN_FEATURE_DIM {
        return None;
    }
    let occluded = sample.is_occluded();
    let signal = if occluded && config.scenario == Scenario::HeavyOcclusion {
        HEAVY_SIGNAL
    } else {
        1.0
    };
    let decode = |j: usize| sample.feature[j] / (signal * FEATURE_SCALE) + BASE_MEAN[j];
    let (y1, x2, y2) = (decode(1), decode(2), decode(3));
    let x1 = if occluded { x2 - BASE_WIDTH } else { decode(0) };
    Some([x1, y1, x2, y2])
}

/// `x1` centres of the two generator modes for an occluded bimodal positive.
pub fn mode_centers(config: &ScenarioConfig, sample: &ToySample) -> Option<[f64; 2]> {
    if config.scenario != Scenario::BimodalBorder || !sample.is_occluded() {
        return None;
    }
    let x1 = base_box(config, sample)?[0];
    let half = 0.5 * config.mode_gap;
    Some([x1 - half, x1 + half])
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_targets_equal_base() {
        let mut c = ScenarioConfig::new(Scenario::Unimodal, 200, 3);
        c.noise_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = draw_positive(&c, &mut rng);
            assert_eq!(d.sample.target.unwrap().0, d.base);
            let recovered = base_box(&c, &d.sample).unwrap();
            for j in 0..DIM {
                assert!((recovered[j] - d.base[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layout_and_ratio() {
        let c = ScenarioConfig::new(Scenario::BimodalBorder, 300, 1);
        let data = generate(&c).unwrap();
        assert_eq!(data.len(), 600);
        assert!(data[..300].iter().all(|s| s.objectness && s.validate().is_ok()));
        assert!(data[300..].iter().all(|s| !s.objectness && s.validate().is_ok()));
        for s in &data[..300] {
            assert_eq!(s.feature.len(), 32);
            assert_eq!(s.feature[VISIBLE_SLOT] + s.feature[OCCLUDED_SLOT], 1.0);
            assert_eq!(s.latent_mode.is_some(), s.is_occluded());
            if s.is_occluded() {
                assert_eq!(s.feature[0], 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ScenarioConfig::new(Scenario::Unimodal, 0, 0);
        assert_eq!(generate(&c).unwrap_err(), Error::EmptyDataset);
        c.n_samples = 10;
        c.correlation_rho = 1.0;
        assert!(generate(&c).is_err());
        c.correlation_rho = 0.5;
        c.occlusion_rate = 1.5;
        assert!(generate(&c).is_err());
        c.occlusion_rate = 0.5;
        c.feature_dim = 5;
        assert!(generate(&c).is_err());
        c.feature_dim = 6;
        c.noise_std = 5e-5;
        assert!(generate(&c).is_ok());
        assert!(analytic_nll(&c).is_err());
    }

    #[test]
    fn seeded() {
        let c = ScenarioConfig::new(Scenario::CorrelatedBorders, 50, 11);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = ScenarioConfig {
            seed: 12,
            ..c.clone()
        };
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }
}
