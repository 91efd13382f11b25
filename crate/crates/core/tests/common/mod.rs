//! Test oracles written independently of the library's density code.
#![allow(dead_code)]

use boxmix_core::distribution::{DIM, N_OFF_DIAG, OFF_DIAG_INDEX};
use boxmix_core::eval::{Detection, GroundTruth};
use boxmix_core::head::{Dense, HeadOutput, MEAN_OUTPUT_SCALE};
use boxmix_core::synthetic::{BASE_MEAN, FEATURE_SCALE, OCCLUDED_SLOT, VISIBLE_SLOT};
use boxmix_core::{
    BoxSource, BoxVector, CholeskyFactor, DecodedBox, HeadConfig, HeadModel, LossVariant, MixtureParams,
};
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_box(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> BoxVector {
    BoxVector(std::array::from_fn(|_| uniform(rng, lo, hi)))
}

pub fn random_factor(rng: &mut ChaCha8Rng, diagonal: bool, unit: bool) -> CholeskyFactor {
    let ld = if unit {
        [0.0; DIM]
    } else {
        std::array::from_fn(|_| uniform(rng, -1.5, 1.5))
    };
    let off = if diagonal {
        [0.0; N_OFF_DIAG]
    } else {
        std::array::from_fn(|_| uniform(rng, -1.0, 1.0))
    };
    CholeskyFactor::new(ld, off).unwrap()
}

/// Random parameters satisfying `variant`'s structure.
pub fn random_params(rng: &mut ChaCha8Rng, variant: LossVariant, k: usize) -> MixtureParams {
    let k = if variant.single_component() { 1 } else { k };
    let diagonal = !variant.learns_off_diag();
    let unit = !variant.learns_log_diag();
    let means = (0..k).map(|_| random_box(rng, 0.0, 1.0)).collect();
    let factors = (0..k).map(|_| random_factor(rng, diagonal, unit)).collect();
    let logits = (0..k).map(|_| uniform(rng, -2.0, 2.0)).collect();
    MixtureParams::new(means, factors, logits).unwrap()
}

/// Dense upper-triangular `U` built from the stored entries.
pub fn dense_u(f: &CholeskyFactor) -> Matrix4<f64> {
    let mut u = Matrix4::zeros();
    for j in 0..DIM {
        u[(j, j)] = f.log_diag()[j].exp();
    }
    for (n, &(a, b)) in OFF_DIAG_INDEX.iter().enumerate() {
        u[(a, b)] = f.off_diag()[n];
    }
    u
}

/// `Σ = (UᵀU)⁻¹` by dense inversion.
pub fn dense_covariance(f: &CholeskyFactor) -> Matrix4<f64> {
    let u = dense_u(f);
    (u.transpose() * u).try_inverse().expect("invertible precision")
}

/// Textbook density `exp(-½ δᵀ Σ⁻¹ δ) / sqrt((2π)⁴ |Σ|)` with `Σ` formed explicitly.
pub fn dense_log_pdf(x: &BoxVector, mean: &BoxVector, f: &CholeskyFactor) -> f64 {
    let sigma = dense_covariance(f);
    let d = Vector4::from_fn(|i, _| x.0[i] - mean.0[i]);
    let inv = sigma.try_inverse().expect("invertible covariance");
    let quad = (d.transpose() * inv * d)[(0, 0)];
    -0.5 * quad - 0.5 * sigma.determinant().ln() - 2.0 * LN_2PI
}

/// Mixture density summed in the linear domain.
pub fn linear_mixture_log_pdf(x: &BoxVector, p: &MixtureParams) -> f64 {
    let z = p.weight_logits();
    let norm: f64 = z.iter().map(|v| v.exp()).sum();
    let total: f64 = p
        .means()
        .iter()
        .zip(p.factors())
        .zip(z)
        .map(|((m, f), zi)| zi.exp() / norm * dense_log_pdf(x, m, f).exp())
        .sum();
    total.ln()
}

/// One full-covariance Gaussian NLL: `½ δᵀUᵀUδ - Σ u_ii + 2 ln 2π`, from dense `U`.
pub fn multivariate_nll(x: &BoxVector, mean: &BoxVector, f: &CholeskyFactor) -> f64 {
    let u = dense_u(f);
    let d = Vector4::from_fn(|i, _| x.0[i] - mean.0[i]);
    let r = u * d;
    0.5 * r.dot(&r) - f.log_diag().iter().sum::<f64>() + 2.0 * LN_2PI
}

/// Independent-coordinate Gaussian NLL: `Σ_j [U_jj² δ_j²/2 - ln U_jj + ln(2π)/2]`.
pub fn diagonal_nll(x: &BoxVector, mean: &BoxVector, u_diag: &[f64; DIM]) -> f64 {
    (0..DIM)
        .map(|j| {
            let d = x.0[j] - mean.0[j];
            u_diag[j] * u_diag[j] * d * d / 2.0 - u_diag[j].ln() + LN_2PI / 2.0
        })
        .sum()
}

/// Euclidean NLL: `Σ_j [δ_j²/2 + ln(2π)/2]`.
pub fn euclidean_nll(x: &BoxVector, mean: &BoxVector) -> f64 {
    (0..DIM)
        .map(|j| {
            let d = x.0[j] - mean.0[j];
            d * d / 2.0 + LN_2PI / 2.0
        })
        .sum()
}

/// Free scalars of the flat layout for `variant`.
pub fn free_indices(variant: LossVariant, k: usize) -> Vec<usize> {
    let means = DIM * k;
    let logits = means + k;
    let log_diag = logits + DIM * k;
    let total = log_diag + N_OFF_DIAG * k;
    (0..total)
        .filter(|&i| {
            i < means
                || (i < logits && !variant.single_component())
                || (i >= logits && i < log_diag && variant.learns_log_diag())
                || (i >= log_diag && variant.learns_off_diag())
        })
        .collect()
}

fn library_loss(x: &BoxVector, k: usize, flat: &[f64], variant: LossVariant) -> f64 {
    boxmix_core::nll_loss(x, &MixtureParams::from_flat(k, flat).unwrap(), variant).unwrap()
}

/// Central differences `(f(p + h) - f(p - h)) / 2h` of the library loss over the flat layout.
pub fn central_difference(x: &BoxVector, p: &MixtureParams, variant: LossVariant, h: f64) -> Vec<f64> {
    let k = p.k();
    let base = p.to_flat();
    let f = |flat: &[f64]| library_loss(x, k, flat, variant);
    let mut out = vec![0.0; base.len()];
    for i in free_indices(variant, k) {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        out[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    out
}

/// Forward differences `(f(p + h) - f(p)) / h` through the library loss.
pub fn forward_difference(x: &BoxVector, p: &MixtureParams, variant: LossVariant, h: f64) -> Vec<f64> {
    let k = p.k();
    let base = p.to_flat();
    let f = |flat: &[f64]| library_loss(x, k, flat, variant);
    let f0 = f(&base);
    let mut out = vec![0.0; base.len()];
    for i in free_indices(variant, k) {
        let mut plus = base.clone();
        plus[i] += h;
        out[i] = (f(&plus) - f0) / h;
    }
    out
}

/// Mixture mean `Σ φ_i μ_i` and total covariance, from dense inverses.
pub fn mixture_moments(p: &MixtureParams) -> (Vector4<f64>, Matrix4<f64>) {
    let z = p.weight_logits();
    let norm: f64 = z.iter().map(|v| v.exp()).sum();
    let w: Vec<f64> = z.iter().map(|v| v.exp() / norm).collect();
    let mu: Vec<Vector4<f64>> = p
        .means()
        .iter()
        .map(|m| Vector4::from_fn(|i, _| m.0[i]))
        .collect();
    let mean = mu
        .iter()
        .zip(&w)
        .fold(Vector4::zeros(), |acc, (m, wi)| acc + m * *wi);
    let mut cov = Matrix4::zeros();
    for ((m, f), wi) in mu.iter().zip(p.factors()).zip(&w) {
        let d = m - mean;
        cov += (dense_covariance(f) + d * d.transpose()) * *wi;
    }
    (mean, cov)
}

/// Linear head emitting the generator's own conditional density: each
/// component's mean decodes the visible coordinates from the feature (`x1`
/// from `x2` when `x1_from_x2`) plus `offset`; objectness fires on either
/// indicator slot.
pub fn oracle_model(
    feature_dim: usize,
    variant: LossVariant,
    components: &[([f64; DIM], CholeskyFactor, f64)],
    x1_from_x2: bool,
) -> HeadModel {
    let k = components.len();
    let config = HeadConfig {
        feature_dim,
        hidden_dims: vec![],
        k_components: k,
        loss_variant: variant,
    };
    let mut layer = Dense::zeros(feature_dim, config.output_dim());
    let params = MixtureParams::new(
        vec![BoxVector::zeros(); k],
        components.iter().map(|c| c.1).collect(),
        components.iter().map(|c| c.2).collect(),
    )
    .unwrap();
    let probe = HeadModel::from_layers(config.clone(), vec![layer.clone()]).unwrap();
    layer.bias = probe.raw_from_output(&HeadOutput {
        params,
        objectness_logit: -10.0,
    });
    for (i, (offset, _, _)) in components.iter().enumerate() {
        for j in 0..DIM {
            let row = DIM * i + j;
            let src = if j == 0 && x1_from_x2 { 2 } else { j };
            layer.weights[row * feature_dim + src] = 1.0 / (FEATURE_SCALE * MEAN_OUTPUT_SCALE);
            // x2 - BASE_WIDTH has the same centring constant as x1.
            layer.bias[row] = (BASE_MEAN[j] + offset[j]) / MEAN_OUTPUT_SCALE;
        }
    }
    let obj = config.output_dim() - 1;
    layer.weights[obj * feature_dim + VISIBLE_SLOT] = 20.0;
    layer.weights[obj * feature_dim + OCCLUDED_SLOT] = 20.0;
    HeadModel::from_layers(config, vec![layer]).unwrap()
}

/// Factor of the precision of noise with std `s` whose `x1`/`x2` entries
/// correlate with `rho`.
pub fn correlated_factor(s: f64, rho: f64) -> CholeskyFactor {
    let mut sigma = Matrix4::from_diagonal_element(s * s);
    sigma[(0, 2)] = rho * s * s;
    sigma[(2, 0)] = rho * s * s;
    let precision = sigma.try_inverse().unwrap();
    let u = precision.cholesky().unwrap().l().transpose();
    let log_diag = std::array::from_fn(|j| u[(j, j)].ln());
    let off = [u[(0, 1)], u[(0, 2)], u[(0, 3)], u[(1, 2)], u[(1, 3)], u[(2, 3)]];
    CholeskyFactor::new(log_diag, off).unwrap()
}

pub fn det(coords: [f64; 4], score: f64, sample_id: u64) -> Detection {
    Detection {
        bbox: DecodedBox {
            coords,
            source: BoxSource::Expectation,
        },
        score,
        sample_id,
    }
}

pub fn gt(entries: &[(u64, [f64; 4])]) -> GroundTruth {
    let mut g = GroundTruth::new();
    for &(id, b) in entries {
        g.entry(id).or_default().push(b);
    }
    g
}

pub const UNIT: [f64; 4] = [0.0, 0.0, 1.0, 1.0];
pub const FAR: [f64; 4] = [5.0, 5.0, 6.0, 6.0];

/// `(a, b, iou)` with analytic overlaps.
pub fn iou_fixtures() -> Vec<([f64; 4], [f64; 4], f64)> {
    vec![
        (UNIT, UNIT, 1.0),
        (UNIT, FAR, 0.0),
        ([0.0, 0.0, 2.0, 2.0], [1.0, 0.0, 3.0, 2.0], 1.0 / 3.0),
        ([0.0, 0.0, 2.0, 2.0], [0.0, 0.0, 1.0, 2.0], 0.5),
        ([0.0, 0.0, 2.0, 2.0], [1.0, 1.0, 3.0, 3.0], 1.0 / 7.0),
        ([0.0, 0.0, 4.0, 4.0], [1.0, 1.0, 2.0, 2.0], 1.0 / 16.0),
        ([0.0, 0.0, 1.0, 1.0], [1.0, 0.0, 2.0, 1.0], 0.0),
    ]
}

/// `[x, 0, x + 1, 1]`: IoU with the unit box is `(1 - x) / (1 + x)`.
pub fn shifted(x: f64) -> [f64; 4] {
    [x, 0.0, x + 1.0, 1.0]
}

/// `(detections, ground truth, IoU threshold, AP)` micro-fixtures with
/// hand-enumerated precision-recall curves.
pub fn ap_fixtures() -> Vec<(Vec<Detection>, GroundTruth, f64, f64)> {
    // Hand-enumerated interpolated precision at the 101 recall levels, as
    // (number of levels, precision) runs from recall 0 upwards.
    let r = |runs: &[(usize, f64)]| {
        assert_eq!(runs.iter().map(|x| x.0).sum::<usize>(), 101);
        runs.iter()
            .flat_map(|&(n, p)| std::iter::repeat_n(p, n))
            .sum::<f64>()
            / 101.0
    };
    vec![
        // Exact match.
        (vec![det(UNIT, 0.9, 0)], gt(&[(0, UNIT)]), 0.95, 1.0),
        // IoU 0.6 below the threshold.
        (vec![det(shifted(0.25), 0.9, 0)], gt(&[(0, UNIT)]), 0.75, 0.0),
        // Two ground truths; hit, miss, hit.
        (
            vec![det(UNIT, 0.9, 0), det(FAR, 0.8, 0), det(UNIT, 0.7, 1)],
            gt(&[(0, UNIT), (1, UNIT)]),
            0.5,
            r(&[(51, 1.0), (50, 2.0 / 3.0)]),
        ),
        // No detections.
        (vec![], gt(&[(0, UNIT)]), 0.5, 0.0),
        // A miss ahead of the only hit.
        (
            vec![det(FAR, 0.9, 0), det(UNIT, 0.5, 0)],
            gt(&[(0, UNIT)]),
            0.5,
            0.5,
        ),
        // Duplicate detection of one ground truth.
        (
            vec![det(UNIT, 0.9, 0), det(UNIT, 0.8, 0)],
            gt(&[(0, UNIT)]),
            0.5,
            1.0,
        ),
        // Four ground truths; hit, hit, miss, miss, hit.
        (
            vec![
                det(UNIT, 0.9, 0),
                det(UNIT, 0.8, 1),
                det(FAR, 0.7, 2),
                det(FAR, 0.6, 2),
                det(UNIT, 0.5, 2),
            ],
            gt(&[(0, UNIT), (1, UNIT), (2, UNIT), (3, UNIT)]),
            0.5,
            r(&[(51, 1.0), (25, 0.6), (25, 0.0)]),
        ),
        // Equal scores: sample 0 is visited first.
        (
            vec![det(FAR, 0.5, 1), det(UNIT, 0.5, 0)],
            gt(&[(0, UNIT), (1, UNIT)]),
            0.5,
            r(&[(51, 1.0), (50, 0.0)]),
        ),
        // The first detection takes the ground truth it overlaps most, leaving
        // the second with an IoU below 0.8.
        (
            vec![det(shifted(0.08), 0.9, 0), det(shifted(0.12), 0.8, 0)],
            gt(&[(0, UNIT), (0, shifted(0.1))]),
            0.8,
            r(&[(51, 1.0), (50, 0.0)]),
        ),
        // IoU exactly at the threshold matches; detection on a sample without ground truth misses.
        (
            vec![det([0.0, 0.0, 1.0, 2.0], 0.9, 0), det(UNIT, 0.3, 7)],
            gt(&[(0, [0.0, 0.0, 2.0, 2.0])]),
            0.5,
            1.0,
        ),
    ]
}
