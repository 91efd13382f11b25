//! On-disk records: datasets (JSON lines), mixture parameters, model
//! checkpoints, loss traces, reports, covariance exports and decoded boxes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use boxmix_core::distribution::{DIM, N_OFF_DIAG};
use boxmix_core::eval::{EvalReport, SweepRow};
use boxmix_core::head::Dense;
use boxmix_core::inference::{BoxSource, DecodedBox};
use boxmix_core::linalg;
use boxmix_core::train::EpochLoss;
use boxmix_core::{BoxVector, CholeskyFactor, HeadConfig, HeadModel, LossVariant, MixtureParams, ToySample};
use serde::{Deserialize, Serialize};

use crate::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub feature: Vec<f64>,
    pub target: Option<[f64; DIM]>,
    pub objectness: u8,
    pub latent_mode: Option<usize>,
}

impl From<&ToySample> for SampleRecord {
    fn from(s: &ToySample) -> Self {
        SampleRecord {
            feature: s.feature.clone(),
            target: s.target.map(|t| t.0),
            objectness: u8::from(s.objectness),
            latent_mode: s.latent_mode,
        }
    }
}

impl TryFrom<SampleRecord> for ToySample {
    type Error = anyhow::Error;

    fn try_from(r: SampleRecord) -> Result<Self> {
        let sample = match r.objectness {
            0 | 1 => ToySample {
                feature: r.feature,
                target: r.target.map(BoxVector),
                objectness: r.objectness == 1,
                latent_mode: r.latent_mode,
            },
            other => bail!("objectness must be 0 or 1, got {other}"),
        };
        sample.validate()?;
        Ok(sample)
    }
}

pub fn write_dataset(path: &Path, data: &[ToySample]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for s in data {
        writeln!(w, "{}", json::to_string(&SampleRecord::from(s))?)?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_dataset(path: &Path) -> Result<Vec<ToySample>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed sample", path.display(), i + 1))?;
        out.push(ToySample::try_from(record).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub k: usize,
    pub means: Vec<[f64; DIM]>,
    pub log_diag: Vec<[f64; DIM]>,
    pub off_diag: Vec<[f64; N_OFF_DIAG]>,
    pub weight_logits: Vec<f64>,
}

impl From<&MixtureParams> for ParamsRecord {
    fn from(p: &MixtureParams) -> Self {
        ParamsRecord {
            k: p.k(),
            means: p.means().iter().map(|m| m.0).collect(),
            log_diag: p.factors().iter().map(|f| *f.log_diag()).collect(),
            off_diag: p.factors().iter().map(|f| *f.off_diag()).collect(),
            weight_logits: p.weight_logits().to_vec(),
        }
    }
}

impl TryFrom<&ParamsRecord> for MixtureParams {
    type Error = anyhow::Error;

    fn try_from(r: &ParamsRecord) -> Result<Self> {
        if [
            r.means.len(),
            r.log_diag.len(),
            r.off_diag.len(),
            r.weight_logits.len(),
        ] != [r.k; 4]
        {
            bail!("mixture record blocks do not all have k = {} entries", r.k);
        }
        let factors = r
            .log_diag
            .iter()
            .zip(&r.off_diag)
            .map(|(ld, off)| CholeskyFactor::new(*ld, *off))
            .collect::<boxmix_core::Result<Vec<_>>>()?;
        let means = r.means.iter().map(|m| BoxVector(*m)).collect();
        Ok(MixtureParams::new(means, factors, r.weight_logits.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfigRecord {
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub k_components: usize,
    pub loss_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs` rows of `inputs` entries.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub config: HeadConfigRecord,
    pub layer_shapes: Vec<[usize; 2]>,
    pub layers: Vec<LayerRecord>,
}

impl From<&HeadModel> for ModelRecord {
    fn from(m: &HeadModel) -> Self {
        let c = m.config();
        ModelRecord {
            config: HeadConfigRecord {
                feature_dim: c.feature_dim,
                hidden_dims: c.hidden_dims.clone(),
                k_components: c.k_components,
                loss_variant: c.loss_variant.name().to_string(),
            },
            layer_shapes: c.layer_shapes().iter().map(|&(i, o)| [i, o]).collect(),
            layers: m
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelRecord> for HeadModel {
    type Error = anyhow::Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let variant = LossVariant::from_name(&r.config.loss_variant)
            .with_context(|| format!("unknown loss variant {:?}", r.config.loss_variant))?;
        let config = HeadConfig {
            feature_dim: r.config.feature_dim,
            hidden_dims: r.config.hidden_dims,
            k_components: r.config.k_components,
            loss_variant: variant,
        };
        let layers = r
            .layers
            .into_iter()
            .map(|l| Dense {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights,
                bias: l.bias,
            })
            .collect();
        Ok(HeadModel::from_layers(config, layers)?)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = json::to_string(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_model(path: &Path) -> Result<HeadModel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot open model {}", path.display()))?;
    let record: ModelRecord =
        serde_json::from_str(&text).with_context(|| format!("{}: malformed model", path.display()))?;
    HeadModel::try_from(record).with_context(|| format!("{}: invalid model", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// `epoch,total_loss,cls_loss,loc_loss`, epochs counted from 1.
pub fn write_loss_csv(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "total_loss", "cls_loss", "loc_loss"])?;
    for (i, e) in trace.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            json::g17(e.total),
            json::g17(e.cls),
            json::g17(e.loc),
        ])?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

/// `axis,value,ap50,ap75,ap,mean_nll,nll_floor`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["axis", "value", "ap50", "ap75", "ap", "mean_nll", "nll_floor"])?;
    for r in rows {
        w.write_record([
            r.axis.to_string(),
            json::g17(r.value),
            json::g17(r.ap50),
            json::g17(r.ap75),
            json::g17(r.ap),
            json::g17(r.mean_nll),
            json::g17(r.nll_floor),
        ])?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))
}

const COORD_NAMES: [&str; DIM] = ["x1", "y1", "x2", "y2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair: String,
    pub mean_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub iou: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub mode: String,
    pub threshold_t: Option<f64>,
    pub ap_per_threshold: Vec<ThresholdAp>,
    pub ap50: f64,
    pub ap75: f64,
    pub ap: f64,
    pub mean_nll: f64,
    pub nll_stderr: f64,
    pub nll_floor: f64,
    pub covariance_diagnostics: Vec<PairRecord>,
    pub covariance_samples: usize,
    pub mode_recovery_error: Option<f64>,
    pub n_eval: usize,
}

impl ReportRecord {
    pub fn new(r: &EvalReport, mode: &str, threshold_t: Option<f64>) -> Self {
        ReportRecord {
            mode: mode.to_string(),
            threshold_t,
            ap_per_threshold: r
                .ap_per_threshold
                .iter()
                .map(|&(iou, ap)| ThresholdAp { iou, ap })
                .collect(),
            ap50: r.ap50,
            ap75: r.ap75,
            ap: r.ap,
            mean_nll: r.mean_nll,
            nll_stderr: r.nll_stderr,
            nll_floor: r.nll_floor,
            covariance_diagnostics: r
                .covariance_diagnostics
                .pairs
                .iter()
                .map(|p| PairRecord {
                    pair: format!("{}-{}", COORD_NAMES[p.a], COORD_NAMES[p.b]),
                    mean_correlation: p.mean,
                })
                .collect(),
            covariance_samples: r.covariance_diagnostics.n_samples,
            mode_recovery_error: r.mode_recovery_error,
            n_eval: r.n_eval,
        }
    }
}

/// One positive sample's predicted distribution, for covariance plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub mean: [f64; DIM],
    pub covariance: [[f64; DIM]; DIM],
    pub weights: Vec<f64>,
    pub component_means: Vec<[f64; DIM]>,
}

impl ExportRecord {
    pub fn new(params: &MixtureParams) -> Result<Self> {
        let (mean, covariance) =
            linalg::mixture_moments(params).context("predicted precision is not invertible")?;
        Ok(ExportRecord {
            mean,
            covariance,
            weights: params.weights(),
            component_means: params.means().iter().map(|m| m.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedRecord {
    #[serde(rename = "box")]
    pub coords: [f64; DIM],
    pub source: String,
}

impl From<&DecodedBox> for DecodedRecord {
    fn from(d: &DecodedBox) -> Self {
        let source = match d.source {
            BoxSource::Expectation => "expectation".to_string(),
            BoxSource::Component(i) => format!("component:{i}"),
            BoxSource::Fallback => "fallback".to_string(),
        };
        DecodedRecord {
            coords: d.coords,
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use boxmix_core::{generate, Scenario, ScenarioConfig};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let data = generate(&ScenarioConfig::new(Scenario::BimodalBorder, 50, 1)).unwrap();
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        let first = fs::read_to_string(&path).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().last().unwrap()).unwrap();
        assert_eq!(line["objectness"], 0);
        assert!(line["target"].is_null() && line["latent_mode"].is_null());
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = HeadModel::init(
            HeadConfig {
                k_components: 3,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        write_json(&path, &ModelRecord::from(&model)).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn params_record_layout() {
        let p = MixtureParams::from_flat(1, &(0..15).map(|v| v as f64 * 0.1).collect::<Vec<_>>()).unwrap();
        let text = json::to_string(&ParamsRecord::from(&p)).unwrap();
        assert_eq!(
            text,
            "{\"k\":1,\"means\":[[0,0.10000000000000001,0.20000000000000001,0.30000000000000004]],\
             \"log_diag\":[[0.5,0.60000000000000009,0.70000000000000007,0.80000000000000004]],\
             \"off_diag\":[[0.90000000000000002,1,1.1000000000000001,1.2000000000000002,1.3,1.4000000000000001]],\
             \"weight_logits\":[0.40000000000000002]}"
        );
        let back: ParamsRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(MixtureParams::try_from(&back).unwrap(), p);
    }

    #[test]
    fn rejects_bad_records() {
        let bad = SampleRecord {
            feature: vec![0.0],
            target: None,
            objectness: 1,
            latent_mode: None,
        };
        assert!(ToySample::try_from(bad).is_err());
        let bad = SampleRecord {
            feature: vec![0.0],
            target: None,
            objectness: 2,
            latent_mode: None,
        };
        assert!(ToySample::try_from(bad).is_err());
    }
}
