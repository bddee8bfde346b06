//! Command-line entry point: each subcommand reads upstream artifacts from
//! the output directory and writes its own, so stages can be rerun and
//! inspected independently.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use foodplay::audiofeat::{Aggregation, MfccConfig};
use foodplay::datamodel::{
    attach_labels, load_manifest, load_sample, read_label_table, FoodSample, PatternConfig,
};
use foodplay::embedtrain::{load_checkpoint, save_checkpoint, TrainConfig};
use foodplay::error::Error;
use foodplay::evalharness::{
    extract_features, full_report, leave_one_out, mine_metric, pca_scatter, save_report,
    train_metric_embedding, write_grid_csv, write_scatter_csv, EncoderInput, HeadConfig, Metric,
    PipelineConfig, RawFeatures, Task,
};
use foodplay::features::{pca_fit, pca_transform, save_pca, FeatureMatrix, PcaTarget};
use foodplay::synthgen::{write_dataset, SynthSpec};
use foodplay::tripletmine::{save_index, DEFAULT_N_NEIGHBORS};

/// Environment variable giving the default output root.
const OUT_ENV: &str = "FOODPLAY_OUT";

#[derive(Parser)]
#[command(name = "foodplay", about = "Cross-modal food embedding pipeline", version)]
struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field by dotted path, e.g. --set mfcc.n_mfcc=20
    /// or --set train.epochs=30. Values parse as JSON, falling back to
    /// strings.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (default: $FOODPLAY_OUT or ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset tree.
    Synth,
    /// Extract per-sample audio and proprioceptive features.
    Features,
    /// Fit PCA models on the audio feature tables.
    Pca,
    /// Build triplet neighbor indices for the configured metrics.
    Mine,
    /// Train one embedding network per configured metric.
    Train,
    /// Run the leave-one-category-out protocol per metric and task.
    Eval,
    /// Run the full evaluation grid and write the report.
    Report,
    /// Project trained embeddings to 3-D scatter data.
    Plot,
}

fn default_aggregation() -> Aggregation {
    Aggregation::MeanStd
}

fn default_mining_n() -> usize {
    DEFAULT_N_NEIGHBORS
}

fn default_metrics() -> Vec<String> {
    Metric::all().iter().map(|m| m.name().to_string()).collect()
}

fn default_tasks() -> Vec<String> {
    Task::report_tasks().iter().map(|t| t.name().to_string()).collect()
}

fn default_true() -> bool {
    true
}

fn default_embedding_dim() -> usize {
    32
}

/// Resolved run configuration; a copy is written beside every artifact set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    /// Dataset tree root; defaults to <out>/dataset (where `synth` writes).
    dataset_root: Option<PathBuf>,
    synth: SynthSpec,
    patterns: PatternConfig,
    mfcc: MfccConfig,
    #[serde(default = "default_aggregation")]
    aggregation: Aggregation,
    pca: PcaTarget,
    #[serde(default = "default_mining_n")]
    mining_n: usize,
    input: EncoderInput,
    #[serde(default = "default_embedding_dim")]
    embedding_dim: usize,
    train: TrainConfig,
    head: HeadConfig,
    #[serde(default = "default_metrics")]
    metrics: Vec<String>,
    #[serde(default = "default_tasks")]
    tasks: Vec<String>,
    #[serde(default = "default_true")]
    baselines: bool,
    seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            synth: SynthSpec::default(),
            patterns: PatternConfig::default(),
            mfcc: MfccConfig::default(),
            aggregation: default_aggregation(),
            pca: PcaTarget::default(),
            mining_n: default_mining_n(),
            input: EncoderInput::Image,
            embedding_dim: default_embedding_dim(),
            train: TrainConfig::default(),
            head: HeadConfig::default(),
            metrics: default_metrics(),
            tasks: default_tasks(),
            baselines: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    fn metrics(&self) -> anyhow::Result<Vec<Metric>> {
        self.metrics.iter().map(|m| Ok(m.parse()?)).collect()
    }

    fn tasks(&self) -> anyhow::Result<Vec<Task>> {
        self.tasks.iter().map(|t| Ok(t.parse()?)).collect()
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            input: self.input,
            embedding_dim: self.embedding_dim,
            mining_n: self.mining_n,
            pca: self.pca,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            head: HeadConfig {
                seed: self.seed,
                ..self.head.clone()
            },
        }
    }
}

/// Sets a dotted path inside a JSON value, e.g. "train.epochs" = 30.
fn set_dotted(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> anyhow::Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow::anyhow!("config path '{path}' does not lead to an object"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("path has at least one part")
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| anyhow::anyhow!("malformed config {}: {e}", path.display()))?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for assignment in &cli.set {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got '{assignment}'"))?;
        let parsed = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_dotted(&mut value, key, parsed)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dataset_root(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.dataset_root.clone().unwrap_or_else(|| out.join("dataset"))
}

/// The per-sample feature tables handed between stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureArtifact {
    mfcc_play: FeatureMatrix,
    mfcc_cut: FeatureMatrix,
    proprio: FeatureMatrix,
}

fn features_path(out: &Path) -> PathBuf {
    out.join("features.json")
}

fn model_path(out: &Path, metric: Metric) -> PathBuf {
    out.join(format!("model_{}.json", metric.name()))
}

fn load_dataset(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<FoodSample>> {
    let root = dataset_root(cfg, out);
    if !root.is_dir() {
        return Err(Error::MissingRoot(root).into());
    }
    let index = load_manifest(&root, &cfg.patterns)?;
    let mut samples: Vec<FoodSample> = index
        .entries
        .iter()
        .map(load_sample)
        .collect::<foodplay::Result<_>>()?;
    let labels_path = root.join("labels.csv");
    if labels_path.is_file() {
        let table = read_label_table(&labels_path)?;
        attach_labels(&mut samples, &table)?;
    }
    Ok(samples)
}

fn load_feature_artifact(out: &Path) -> anyhow::Result<FeatureArtifact> {
    let path = features_path(out);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path).into());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?)
}

/// Combines the dataset (ids, labels, images) with the feature artifact,
/// so `report`/`eval` reuse what `features` computed.
fn assemble_raw(samples: &[FoodSample], artifact: FeatureArtifact) -> anyhow::Result<RawFeatures> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| s.image.is_none() || s.labels.is_none())
        .map(|s| s.id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingModality {
            modality: "overhead image or labels".into(),
            samples: missing,
        }
        .into());
    }
    let ids: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
    for m in [&artifact.mfcc_play, &artifact.mfcc_cut, &artifact.proprio] {
        if m.ids != ids {
            return Err(Error::IdentifierMismatch(
                "feature table rows do not match the dataset; rerun `features`".into(),
            )
            .into());
        }
    }
    let first = samples[0].image.as_ref().unwrap();
    Ok(RawFeatures {
        ids,
        labels: samples.iter().map(|s| s.labels.unwrap()).collect(),
        images: samples
            .iter()
            .map(|s| foodplay::embedtrain::Tensor::from_image(s.image.as_ref().unwrap()))
            .collect(),
        image_size: (first.width, first.height),
        mfcc_play: artifact.mfcc_play,
        mfcc_cut: artifact.mfcc_cut,
        proprio: artifact.proprio,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join("run_config.json"), &cfg)?;

    match cli.cmd {
        Cmd::Synth => {
            let root = dataset_root(&cfg, &out);
            write_dataset(&cfg.synth, &root)?;
            println!(
                "wrote {} categories x {} samples under {}",
                cfg.synth.n_categories,
                cfg.synth.samples_per_category,
                root.display()
            );
        }
        Cmd::Features => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = extract_features(&samples, &cfg.mfcc, cfg.aggregation)?;
            let artifact = FeatureArtifact {
                mfcc_play: raw.mfcc_play,
                mfcc_cut: raw.mfcc_cut,
                proprio: raw.proprio,
            };
            write_json(&features_path(&out), &artifact)?;
            println!(
                "wrote feature tables for {} samples to {}",
                artifact.mfcc_play.n_samples(),
                features_path(&out).display()
            );
        }
        Cmd::Pca => {
            let artifact = load_feature_artifact(&out)?;
            for (name, matrix) in [("play", &artifact.mfcc_play), ("cut", &artifact.mfcc_cut)] {
                let model = pca_fit(matrix, cfg.pca, true)?;
                let path = out.join(format!("pca_{name}.json"));
                save_pca(&path, &model)?;
                let reduced = pca_transform(&model, matrix)?;
                write_json(&out.join(format!("features_pca_{name}.json")), &reduced)?;
                println!(
                    "pca_{name}: {} -> {} components ({})",
                    matrix.n_features(),
                    model.n_components(),
                    path.display()
                );
            }
        }
        Cmd::Mine => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = assemble_raw(&samples, load_feature_artifact(&out)?)?;
            let all: Vec<usize> = (0..raw.n_samples()).collect();
            let pipeline = cfg.pipeline();
            for metric in cfg.metrics()? {
                let index = mine_metric(&raw, &all, metric, &pipeline)?;
                let path = out.join(format!("index_{}.json", metric.name()));
                save_index(&path, &index)?;
                println!("mined {} ({} anchors eligible)", path.display(), index.eligible_anchors().len());
            }
        }
        Cmd::Train => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = assemble_raw(&samples, load_feature_artifact(&out)?)?;
            let all: Vec<usize> = (0..raw.n_samples()).collect();
            let pipeline = cfg.pipeline();
            for metric in cfg.metrics()? {
                let model = train_metric_embedding(&raw, &all, metric, &pipeline, cfg.seed)?;
                let path = model_path(&out, metric);
                save_checkpoint(&path, &model)?;
                let last = model.loss_history.last().copied().unwrap_or(0.0);
                println!("trained {} (final loss {last:.4})", path.display());
            }
        }
        Cmd::Eval => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = assemble_raw(&samples, load_feature_artifact(&out)?)?;
            let pipeline = cfg.pipeline();
            for metric in cfg.metrics()? {
                for task in cfg.tasks()? {
                    let report = leave_one_out(&samples, &raw, metric, task, &pipeline)?;
                    let path =
                        out.join(format!("loo_{}_{}.json", metric.name(), task.name()));
                    write_json(&path, &report)?;
                    match report.mean {
                        Some(mean) => println!("{}: mean {mean:.3}", path.display()),
                        None => println!("{}: all folds errored", path.display()),
                    }
                }
            }
        }
        Cmd::Report => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = assemble_raw(&samples, load_feature_artifact(&out)?)?;
            let metrics = cfg.metrics()?;
            let report = full_report(
                &samples,
                &raw,
                &metrics,
                &cfg.tasks()?,
                &cfg.pipeline(),
                cfg.baselines,
            )?;
            save_report(&out.join("report.json"), &report)?;
            write_grid_csv(&out.join("grid.csv"), &report)?;
            for (name, rows) in &report.scatter {
                write_scatter_csv(&out.join(format!("scatter_{name}.csv")), rows)?;
            }
            println!(
                "report: {} rows x {} tasks -> {}",
                report.rows.len(),
                report.tasks.len(),
                out.join("report.json").display()
            );
        }
        Cmd::Plot => {
            let samples = load_dataset(&cfg, &out)?;
            let raw = assemble_raw(&samples, load_feature_artifact(&out)?)?;
            for metric in cfg.metrics()? {
                let path = model_path(&out, metric);
                if !path.is_file() {
                    return Err(Error::MissingArtifact(path).into());
                }
                let model = load_checkpoint(&path)?;
                let inputs: Vec<_> = match cfg.input {
                    EncoderInput::Image => raw.images.clone(),
                    _ => (0..raw.n_samples())
                        .map(|i| {
                            foodplay::embedtrain::Tensor::from_vec(match cfg.input {
                                EncoderInput::AudioPlay => raw.mfcc_play.row(i),
                                EncoderInput::AudioCut => raw.mfcc_cut.row(i),
                                EncoderInput::Proprio => raw.proprio.row(i),
                                EncoderInput::Image => unreachable!(),
                            })
                        })
                        .collect(),
                };
                let e = foodplay::embedtrain::embed_dataset(
                    &model,
                    &raw.ids,
                    &inputs,
                    metric.name(),
                )?;
                let rows = pca_scatter(&e, &raw.labels)?;
                let csv = out.join(format!("scatter_{}.csv", metric.name()));
                write_scatter_csv(&csv, &rows)?;
                println!("wrote {} ({} rows)", csv.display(), rows.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
