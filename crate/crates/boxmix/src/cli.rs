//! Subcommands. Each one writes its primary artifact plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use boxmix_core::eval::{sweep, SweepAxis, SweepSetup};
use boxmix_core::inference::{InferenceMode, DEFAULT_THRESHOLD};
use boxmix_core::{
    decode, evaluate, generate, train, HeadConfig, HeadModel, InferenceConfig, LossVariant, Scenario,
    ScenarioConfig, ToySample, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::format::{self, DecodedRecord, ExportRecord, ModelRecord, ReportRecord};
use crate::json;
use crate::manifest::{sidecar, RunManifest, TOOL, VERSION};

/// A bad flag or flag combination; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// 2 for usage errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|e| e.is::<UsageError>() || e.is::<clap::Error>());
    if is_usage {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "boxmix",
    version,
    about = "Mixture-of-Gaussians box regression on synthetic occlusion data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as JSON lines.
    Generate(GenerateArgs),
    /// Train a head; writes model.json, loss.csv and manifest.json into --out.
    Train(TrainArgs),
    /// Score a model on a dataset and write a JSON report.
    Eval(EvalArgs),
    /// Per-sample predicted covariance and components, for plotting.
    Export(ExportArgs),
    /// Train and evaluate along one axis and write a CSV table.
    Sweep(SweepArgs),
    /// Decode one box per positive sample as JSON lines.
    Predict(PredictArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
        format!("unknown scenario {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_variant(s: &str) -> Result<LossVariant, String> {
    LossVariant::from_name(s).ok_or_else(|| {
        let names: Vec<_> = LossVariant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_mode(s: &str) -> Result<InferenceMode, String> {
    InferenceMode::from_name(s).ok_or_else(|| format!("unknown mode {s:?}; expected average or probable"))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Positive samples; as many negatives are appended.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.3)]
    pub mode_gap: f64,
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.5)]
    pub occlusion_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, env = "BOXMIX_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "full-mixture", value_parser = parse_variant)]
    pub variant: LossVariant,
    /// Mixture components [default: 1 for single-component variants, else 8].
    #[arg(long)]
    pub k: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Weight of the localization loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Seeds both initialization and shuffling.
    #[arg(long, env = "BOXMIX_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, default_value = "probable", value_parser = parse_mode)]
    pub mode: InferenceMode,
    /// Probable-inference threshold, in (0, 1) [default: 0.4].
    #[arg(long, allow_negative_numbers = true)]
    pub t: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset written by `generate`; its manifest supplies the scenario.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    K,
    T,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long)]
    pub values: String,
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset written by `generate`; its manifest supplies the scenario.
    #[arg(long)]
    pub eval_data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub infer: InferArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Generator settings as recorded in a dataset's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario: String,
    pub n_samples: usize,
    pub noise_std: f64,
    pub mode_gap: f64,
    pub correlation_rho: f64,
    pub occlusion_rate: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl From<&ScenarioConfig> for ScenarioRecord {
    fn from(c: &ScenarioConfig) -> Self {
        ScenarioRecord {
            scenario: c.scenario.name().to_string(),
            n_samples: c.n_samples,
            noise_std: c.noise_std,
            mode_gap: c.mode_gap,
            correlation_rho: c.correlation_rho,
            occlusion_rate: c.occlusion_rate,
            feature_dim: c.feature_dim,
            seed: c.seed,
        }
    }
}

impl TryFrom<ScenarioRecord> for ScenarioConfig {
    type Error = anyhow::Error;

    fn try_from(r: ScenarioRecord) -> Result<Self> {
        let scenario = parse_scenario(&r.scenario).map_err(anyhow::Error::msg)?;
        Ok(ScenarioConfig {
            scenario,
            n_samples: r.n_samples,
            noise_std: r.noise_std,
            mode_gap: r.mode_gap,
            correlation_rho: r.correlation_rho,
            occlusion_rate: r.occlusion_rate,
            feature_dim: r.feature_dim,
            seed: r.seed,
        })
    }
}

#[derive(Debug, Serialize)]
struct HeadRecord {
    variant: &'static str,
    k: usize,
    hidden: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct TrainRecord {
    epochs: usize,
    learning_rate: f64,
    momentum: f64,
    lambda_loc: f64,
    batch_size: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct InferRecord {
    mode: &'static str,
    threshold_t: Option<f64>,
}

impl ModelArgs {
    fn head_config(&self, feature_dim: usize) -> Result<HeadConfig> {
        let k = self
            .k
            .unwrap_or(if self.variant.single_component() { 1 } else { 8 });
        if let Err(e) = self.variant.check_k(k) {
            return usage(format!("--variant {} --k {k}: {e}", self.variant.name()));
        }
        let config = HeadConfig {
            feature_dim,
            hidden_dims: self.hidden.clone(),
            k_components: k,
            loss_variant: self.variant,
        };
        if let Err(e) = config.validate() {
            return usage(e.to_string());
        }
        Ok(config)
    }
}

fn head_record(c: &HeadConfig) -> HeadRecord {
    HeadRecord {
        variant: c.loss_variant.name(),
        k: c.k_components,
        hidden: c.hidden_dims.clone(),
    }
}

impl TrainOpts {
    fn config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            lambda_loc: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        };
        if let Err(e) = config.validate() {
            return usage(e.to_string());
        }
        Ok(config)
    }
}

fn train_record(c: &TrainConfig) -> TrainRecord {
    TrainRecord {
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        momentum: c.momentum,
        lambda_loc: c.lambda_loc,
        batch_size: c.batch_size,
        seed: c.seed,
    }
}

impl InferArgs {
    fn config(&self) -> Result<InferenceConfig> {
        let t = self.t.unwrap_or(DEFAULT_THRESHOLD);
        match InferenceConfig::new(self.mode, t) {
            Ok(c) => Ok(c),
            Err(e) => usage(format!("--t {t}: {e}")),
        }
    }
}

fn infer_record(c: &InferenceConfig) -> InferRecord {
    InferRecord {
        mode: c.mode().name(),
        threshold_t: (c.mode() == InferenceMode::Probable).then(|| c.threshold()),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Reads the generator settings a dataset was produced with.
fn dataset_scenario(data: &Path) -> Result<ScenarioConfig> {
    let path = sidecar(data);
    let m = RunManifest::read(&path).with_context(|| {
        format!(
            "the scenario of {} is read from its generate manifest",
            data.display()
        )
    })?;
    let record: ScenarioRecord = serde_json::from_value(m.config)
        .with_context(|| format!("{}: not a generate manifest", path.display()))?;
    ScenarioConfig::try_from(record).with_context(|| format!("{}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
        }
        _ => Ok(()),
    }
}

struct Run<'a> {
    argv: &'a [String],
    start: Instant,
}

impl Run<'_> {
    fn finish<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        seed: Option<u64>,
        artifacts: &[&Path],
        manifest: &Path,
    ) -> Result<()> {
        let cwd = std::env::current_dir().context("cannot read the working directory")?;
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            argv: self.argv.to_vec(),
            cwd: display(&cwd),
            config: serde_json::to_value(config)?,
            seed,
            artifacts: artifacts.iter().map(|p| display(p)).collect(),
            duration_secs: self.start.elapsed().as_secs_f64(),
        }
        .write(manifest)
    }
}

/// Runs a parsed command line. `argv` excludes the program name and is
/// recorded verbatim in the manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let run = Run {
        argv,
        start: Instant::now(),
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(&run, a),
        Command::Train(a) => cmd_train(&run, a),
        Command::Eval(a) => cmd_eval(&run, a),
        Command::Export(a) => cmd_export(&run, a),
        Command::Sweep(a) => cmd_sweep(&run, a),
        Command::Predict(a) => cmd_predict(&run, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn cmd_generate(run: &Run, a: GenerateArgs) -> Result<()> {
    let config = ScenarioConfig {
        scenario: a.scenario,
        n_samples: a.n,
        noise_std: a.noise_std,
        mode_gap: a.mode_gap,
        correlation_rho: a.rho,
        occlusion_rate: a.occlusion_rate,
        feature_dim: a.feature_dim,
        seed: a.seed,
    };
    if a.n == 0 {
        return usage("--n must be at least 1");
    }
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    let data = generate(&config)?;
    create_parent(&a.out)?;
    format::write_dataset(&a.out, &data)?;
    run.finish(
        "generate",
        &ScenarioRecord::from(&config),
        Some(a.seed),
        &[&a.out],
        &sidecar(&a.out),
    )
}

fn load_data(path: &Path) -> Result<Vec<ToySample>> {
    let data = format::read_dataset(path)?;
    if data.is_empty() {
        anyhow::bail!("{} holds no samples", path.display());
    }
    Ok(data)
}

fn cmd_train(run: &Run, a: TrainArgs) -> Result<()> {
    let train_config = a.train.config()?;
    let data = load_data(&a.data)?;
    let head = a.model.head_config(data[0].feature.len())?;
    let model = HeadModel::init(head.clone(), train_config.seed)?;
    let (model, trace) = train(model, &data, &train_config)
        .with_context(|| format!("training on {} failed", a.data.display()))?;

    fs::create_dir_all(&a.out).with_context(|| format!("cannot create directory {}", a.out.display()))?;
    let model_path = a.out.join("model.json");
    let loss_path = a.out.join("loss.csv");
    format::write_json(&model_path, &ModelRecord::from(&model))?;
    format::write_loss_csv(&loss_path, &trace)?;

    #[derive(Serialize)]
    struct Config {
        data: String,
        head: HeadRecord,
        train: TrainRecord,
    }
    let config = Config {
        data: display(&a.data),
        head: head_record(&head),
        train: train_record(&train_config),
    };
    run.finish(
        "train",
        &config,
        Some(train_config.seed),
        &[&model_path, &loss_path],
        &a.out.join("manifest.json"),
    )
}

#[derive(Serialize)]
struct ModelDataRecord<I> {
    model: String,
    data: String,
    #[serde(flatten)]
    inference: I,
}

fn cmd_eval(run: &Run, a: EvalArgs) -> Result<()> {
    let infer = a.infer.config()?;
    let model = format::read_model(&a.model)?;
    let data = load_data(&a.data)?;
    let scenario = dataset_scenario(&a.data)?;
    let report = evaluate(&model, &data, &infer, &scenario)
        .with_context(|| format!("cannot evaluate {} on {}", a.model.display(), a.data.display()))?;
    let record = infer_record(&infer);
    create_parent(&a.out)?;
    format::write_json(
        &a.out,
        &ReportRecord::new(&report, record.mode, record.threshold_t),
    )?;
    let config = ModelDataRecord {
        model: display(&a.model),
        data: display(&a.data),
        inference: record,
    };
    run.finish("eval", &config, None, &[&a.out], &sidecar(&a.out))
}

fn positives(data: &[ToySample]) -> impl Iterator<Item = &ToySample> {
    data.iter().filter(|s| s.objectness && s.target.is_some())
}

fn cmd_export(run: &Run, a: ExportArgs) -> Result<()> {
    let model = format::read_model(&a.model)?;
    let data = format::read_dataset(&a.data)?;
    let mut records = Vec::new();
    for (i, sample) in data
        .iter()
        .enumerate()
        .filter(|(_, s)| s.objectness && s.target.is_some())
    {
        let out = model
            .forward(&sample.feature)
            .with_context(|| format!("{}: sample {i}", a.data.display()))?;
        records.push(
            ExportRecord::new(&out.params).with_context(|| format!("{}: sample {i}", a.data.display()))?,
        );
    }
    create_parent(&a.out)?;
    format::write_json(&a.out, &records)?;
    #[derive(Serialize)]
    struct Config {
        model: String,
        data: String,
    }
    let config = Config {
        model: display(&a.model),
        data: display(&a.data),
    };
    run.finish("export", &config, None, &[&a.out], &sidecar(&a.out))
}

fn cmd_predict(run: &Run, a: PredictArgs) -> Result<()> {
    let infer = a.infer.config()?;
    let model = format::read_model(&a.model)?;
    let data = format::read_dataset(&a.data)?;
    let mut text = String::new();
    for sample in positives(&data) {
        let out = model.forward(&sample.feature)?;
        text.push_str(&json::to_string(&DecodedRecord::from(&decode(
            &out.params,
            &infer,
        )))?);
        text.push('\n');
    }
    create_parent(&a.out)?;
    fs::write(&a.out, text).with_context(|| format!("cannot write {}", a.out.display()))?;
    let config = ModelDataRecord {
        model: display(&a.model),
        data: display(&a.data),
        inference: infer_record(&infer),
    };
    run.finish("predict", &config, None, &[&a.out], &sidecar(&a.out))
}

/// Parses `--values`, warning about and dropping duplicates.
fn parse_values<T: std::str::FromStr + PartialEq + Copy + std::fmt::Display>(raw: &str) -> Result<Vec<T>> {
    let mut out: Vec<T> = Vec::new();
    let mut dupes = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Ok(v) = item.parse::<T>() else {
            return usage(format!("--values: cannot parse {item:?}"));
        };
        if out.contains(&v) {
            dupes.push(v.to_string());
        } else {
            out.push(v);
        }
    }
    if out.is_empty() {
        return usage("--values needs at least one value");
    }
    if !dupes.is_empty() {
        eprintln!("warning: duplicate sweep values dropped: {}", dupes.join(", "));
    }
    Ok(out)
}

fn cmd_sweep(run: &Run, a: SweepArgs) -> Result<()> {
    let axis = match a.axis {
        Axis::K => {
            let ks = parse_values::<usize>(&a.values)?;
            for &k in &ks {
                if let Err(e) = a.model.variant.check_k(k) {
                    return usage(format!("--variant {} with k = {k}: {e}", a.model.variant.name()));
                }
            }
            SweepAxis::K(ks)
        }
        Axis::T => {
            let ts = parse_values::<f64>(&a.values)?;
            for &t in &ts {
                if let Err(e) = InferenceConfig::probable(t) {
                    return usage(format!("--values: {e}"));
                }
            }
            SweepAxis::T(ts)
        }
    };
    let train_config = a.train.config()?;
    let inference = a.infer.config()?;
    let train_data = load_data(&a.data)?;
    let eval_data = load_data(&a.eval_data)?;
    let scenario = dataset_scenario(&a.eval_data)?;
    let head = a.model.head_config(train_data[0].feature.len())?;
    let setup = SweepSetup {
        head: head.clone(),
        train: train_config.clone(),
        inference,
        scenario,
        train_data: &train_data,
        eval_data: &eval_data,
    };
    let rows = sweep(&axis, &setup).context("sweep failed")?;
    create_parent(&a.out)?;
    format::write_sweep_csv(&a.out, &rows)?;

    #[derive(Serialize)]
    struct Config {
        axis: &'static str,
        values: Vec<f64>,
        data: String,
        eval_data: String,
        head: HeadRecord,
        train: TrainRecord,
        inference: InferRecord,
    }
    let config = Config {
        axis: axis.name(),
        values: rows.iter().map(|r| r.value).collect(),
        data: display(&a.data),
        eval_data: display(&a.eval_data),
        head: head_record(&head),
        train: train_record(&train_config),
        inference: infer_record(&inference),
    };
    run.finish(
        "sweep",
        &config,
        Some(train_config.seed),
        &[&a.out],
        &sidecar(&a.out),
    )
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.tool != TOOL {
        anyhow::bail!("{}: written by {:?}, not {TOOL}", a.manifest.display(), m.tool);
    }
    if m.version != VERSION {
        eprintln!(
            "warning: {} was written by version {}, replaying with {VERSION}",
            a.manifest.display(),
            m.version
        );
    }
    let cli = Cli::try_parse_from(std::iter::once(TOOL.to_string()).chain(m.argv.iter().cloned())).map_err(
        |e| {
            UsageError(format!(
                "{}: recorded arguments no longer parse: {e}",
                a.manifest.display()
            ))
        },
    )?;
    if matches!(cli.command, Command::Replay(_)) {
        return usage("a replay manifest cannot be replayed");
    }
    let cli = with_recorded_seed(cli, m.seed);
    std::env::set_current_dir(&m.cwd)
        .with_context(|| format!("cannot enter recorded directory {}", m.cwd))?;
    run(cli, &m.argv)
}

/// The recorded seed wins over whatever BOXMIX_SEED holds now.
fn with_recorded_seed(mut cli: Cli, seed: Option<u64>) -> Cli {
    if let Some(seed) = seed {
        match &mut cli.command {
            Command::Generate(a) => a.seed = seed,
            Command::Train(a) => a.train.seed = seed,
            Command::Sweep(a) => a.train.seed = seed,
            _ => {}
        }
    }
    cli
}
