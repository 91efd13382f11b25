//! IoU, COCO-style average precision, and model evaluation on synthetic data.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::distribution::{nll_loss, LossVariant, MixtureParams, DIM};
use crate::error::{Error, Result};
use crate::head::{HeadConfig, HeadModel};
use crate::inference::{decode, DecodedBox, InferenceConfig};
use crate::linalg;
use crate::math::{self, sigmoid};
use crate::synthetic::{analytic_nll, mode_centers, Scenario, ScenarioConfig, ToySample};
use crate::train::{train, TrainConfig};

/// Recall levels of the interpolated precision-recall curve.
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: DecodedBox,
    /// Objectness probability in `[0, 1]`.
    pub score: f64,
    pub sample_id: u64,
}

/// Ground-truth boxes per sample id.
pub type GroundTruth = BTreeMap<u64, Vec<[f64; DIM]>>;

fn check_ordered(b: &[f64; DIM]) -> Result<()> {
    if b[0] <= b[2] && b[1] <= b[3] {
        Ok(())
    } else {
        Err(Error::UnorderedBox(*b))
    }
}

fn area(b: &[f64; DIM]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

/// Intersection over union of two ordered boxes; 0 when the union is empty.
pub fn iou(a: &[f64; DIM], b: &[f64; DIM]) -> Result<f64> {
    check_ordered(a)?;
    check_ordered(b)?;
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = area(a) + area(b) - inter;
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

/// 101-point interpolated AP at one IoU threshold.
///
/// Detections are visited by descending score (ties by sample id, then input
/// order) and each is matched to the highest-IoU unmatched ground truth of its
/// sample, provided that IoU reaches `iou_threshold`.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &GroundTruth,
    iou_threshold: f64,
) -> Result<f64> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "IoU threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let n_gt: usize = ground_truth.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    for d in detections {
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(Error::InvalidParameter(alloc::format!(
                "detection score must be in [0, 1], got {}",
                d.score
            )));
        }
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.sample_id.cmp(&db.sample_id))
            .then(a.cmp(&b))
    });

    let mut matched: BTreeMap<u64, Vec<bool>> = ground_truth
        .iter()
        .map(|(&id, boxes)| (id, alloc::vec![false; boxes.len()]))
        .collect();
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let det = &detections[i];
        if let (Some(gts), Some(used)) = (ground_truth.get(&det.sample_id), matched.get_mut(&det.sample_id)) {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let v = iou(&det.bbox.coords, gt)?;
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
                tp += 1;
            }
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: best precision at any rank at or beyond this one.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&v| v < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Ok(sum / RECALL_POINTS as f64)
}

/// Mean learned correlation of one coordinate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCorrelation {
    pub a: usize,
    pub b: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDiagnostics {
    /// All six coordinate pairs in row-major order.
    pub pairs: Vec<PairCorrelation>,
    /// Samples the means were taken over.
    pub n_samples: usize,
}

impl CovarianceDiagnostics {
    pub fn correlation(&self, a: usize, b: usize) -> Option<f64> {
        let (a, b) = (a.min(b), a.max(b));
        self.pairs.iter().find(|p| p.a == a && p.b == b).map(|p| p.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(IoU threshold, AP)` for 0.50..=0.95 in steps of 0.05.
    pub ap_per_threshold: Vec<(f64, f64)>,
    pub ap50: f64,
    pub ap75: f64,
    /// Mean AP over all thresholds.
    pub ap: f64,
    pub mean_nll: f64,
    pub nll_stderr: f64,
    pub nll_floor: f64,
    /// Correlations of the predicted mixture covariance, averaged over occluded
    /// positives (all positives when none are occluded).
    pub covariance_diagnostics: CovarianceDiagnostics,
    /// Bimodal scenario only: mean best-assignment error between component
    /// `x1` means and the generator's mode centres.
    pub mode_recovery_error: Option<f64>,
    pub n_eval: usize,
}

fn check_scenario(model: &HeadModel, dataset: &[ToySample], scenario: &ScenarioConfig) -> Result<()> {
    scenario.validate()?;
    let dim = model.config().feature_dim;
    if dim != scenario.feature_dim {
        return Err(Error::Config(alloc::format!(
            "model expects {dim} features but the scenario produces {}",
            scenario.feature_dim
        )));
    }
    if let Some(s) = dataset.iter().find(|s| s.feature.len() != dim) {
        return Err(Error::Config(alloc::format!(
            "dataset feature length {} does not match the model's {dim}",
            s.feature.len()
        )));
    }
    if scenario.scenario != Scenario::BimodalBorder && dataset.iter().any(|s| s.latent_mode.is_some()) {
        return Err(Error::Config(alloc::format!(
            "dataset carries latent modes but the scenario is {}",
            scenario.scenario.name()
        )));
    }
    Ok(())
}

fn mode_error(params: &MixtureParams, centers: [f64; 2]) -> f64 {
    let xs: Vec<f64> = params.means().iter().map(|m| m.0[0]).collect();
    let mut best = f64::INFINITY;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if i == j && xs.len() > 1 {
                continue;
            }
            let e = (xs[i] - centers[0]).abs().max((xs[j] - centers[1]).abs());
            best = best.min(e);
        }
    }
    best
}

/// [`evaluate`] with a precomputed NLL floor.
pub fn evaluate_with_floor(
    model: &HeadModel,
    dataset: &[ToySample],
    infer_config: &InferenceConfig,
    scenario: &ScenarioConfig,
    nll_floor: f64,
) -> Result<EvalReport> {
    check_scenario(model, dataset, scenario)?;
    let mut detections = Vec::new();
    let mut ground_truth = GroundTruth::new();
    let mut nlls = Vec::new();
    let mut corr_all = Vec::new();
    let mut corr_occluded = Vec::new();
    let mut mode_errors = Vec::new();

    for (id, sample) in dataset.iter().enumerate() {
        let Some(target) = sample.target.filter(|_| sample.objectness) else {
            continue;
        };
        let id = id as u64;
        let out = model.forward(&sample.feature)?;
        detections.push(Detection {
            bbox: decode(&out.params, infer_config),
            score: sigmoid(out.objectness_logit),
            sample_id: id,
        });
        ground_truth.insert(id, alloc::vec![target.ordered()]);
        nlls.push(nll_loss(&target, &out.params, LossVariant::FullMixture)?);

        if let Some((_, cov)) = linalg::mixture_moments(&out.params) {
            let corr = linalg::correlation(&cov);
            if sample.is_occluded() {
                corr_occluded.push(corr);
            }
            corr_all.push(corr);
        }
        if let Some(centers) = mode_centers(scenario, sample) {
            mode_errors.push(mode_error(&out.params, centers));
        }
    }
    if nlls.is_empty() {
        return Err(Error::NoPositiveSamples);
    }

    let thresholds = coco_thresholds();
    let mut ap_per_threshold = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        ap_per_threshold.push((t, average_precision(&detections, &ground_truth, t)?));
    }
    let ap = ap_per_threshold.iter().map(|(_, v)| v).sum::<f64>() / thresholds.len() as f64;

    let n = nlls.len() as f64;
    let mean_nll = nlls.iter().sum::<f64>() / n;
    let var = nlls.iter().map(|v| (v - mean_nll) * (v - mean_nll)).sum::<f64>() / (n - 1.0).max(1.0);

    let corr_samples = if corr_occluded.is_empty() {
        &corr_all
    } else {
        &corr_occluded
    };
    let mut pairs = Vec::with_capacity(6);
    for a in 0..DIM {
        for b in (a + 1)..DIM {
            let mean = corr_samples.iter().map(|c| c[a][b]).sum::<f64>() / corr_samples.len().max(1) as f64;
            pairs.push(PairCorrelation { a, b, mean });
        }
    }

    Ok(EvalReport {
        ap50: ap_per_threshold[0].1,
        ap75: ap_per_threshold[5].1,
        ap,
        ap_per_threshold,
        mean_nll,
        nll_stderr: math::sqrt(var / n),
        nll_floor,
        covariance_diagnostics: CovarianceDiagnostics {
            pairs,
            n_samples: corr_samples.len(),
        },
        mode_recovery_error: (!mode_errors.is_empty())
            .then(|| mode_errors.iter().sum::<f64>() / mode_errors.len() as f64),
        n_eval: nlls.len(),
    })
}

/// Scores `model` on the positives of `dataset`, which must come from `scenario`.
pub fn evaluate(
    model: &HeadModel,
    dataset: &[ToySample],
    infer_config: &InferenceConfig,
    scenario: &ScenarioConfig,
) -> Result<EvalReport> {
    check_scenario(model, dataset, scenario)?;
    let floor = analytic_nll(scenario)?;
    evaluate_with_floor(model, dataset, infer_config, scenario, floor)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Number of mixture components.
    K(Vec<usize>),
    /// Probable-inference threshold.
    T(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::K(_) => "k",
            SweepAxis::T(_) => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap: f64,
    pub mean_nll: f64,
    pub nll_floor: f64,
}

/// Shared settings for every point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub scenario: ScenarioConfig,
    pub train_data: &'a [ToySample],
    pub eval_data: &'a [ToySample],
}

fn row(axis: &'static str, value: f64, r: &EvalReport) -> SweepRow {
    SweepRow {
        axis,
        value,
        ap50: r.ap50,
        ap75: r.ap75,
        ap: r.ap,
        mean_nll: r.mean_nll,
        nll_floor: r.nll_floor,
    }
}

/// Trains and evaluates once per axis value, with shared seeds.
///
/// Values are deduplicated and rows come back sorted by value. Along `t` the
/// model is trained once (training does not depend on `t`) and evaluated with
/// probable inference at each threshold.
pub fn sweep(axis: &SweepAxis, setup: &SweepSetup<'_>) -> Result<Vec<SweepRow>> {
    let floor = analytic_nll(&setup.scenario)?;
    let fit = |head: HeadConfig| -> Result<HeadModel> {
        let model = HeadModel::init(head, setup.train.seed)?;
        Ok(train(model, setup.train_data, &setup.train)?.0)
    };
    match axis {
        SweepAxis::K(values) => {
            let mut values = values.clone();
            values.sort_unstable();
            values.dedup();
            if values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            values
                .iter()
                .map(|&k| {
                    let head = HeadConfig {
                        k_components: k,
                        ..setup.head.clone()
                    };
                    let model = fit(head)?;
                    let r = evaluate_with_floor(
                        &model,
                        setup.eval_data,
                        &setup.inference,
                        &setup.scenario,
                        floor,
                    )?;
                    Ok(row("k", k as f64, &r))
                })
                .collect()
        }
        SweepAxis::T(values) => {
            let mut values = values.clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            let configs = values
                .iter()
                .map(|&t| InferenceConfig::probable(t))
                .collect::<Result<Vec<_>>>()?;
            let model = fit(setup.head.clone())?;
            configs
                .iter()
                .map(|cfg| {
                    let r = evaluate_with_floor(&model, setup.eval_data, cfg, &setup.scenario, floor)?;
                    Ok(row("t", cfg.threshold(), &r))
                })
                .collect()
        }
    }
}
