//! Evaluation harness: 3-layer perceptron heads on top of embeddings for
//! the material-property tasks, the leave-one-category-out protocol, and
//! grid-shaped report assembly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::{aggregate, mfcc, Aggregation, MfccConfig};
use crate::datamodel::{FoodSample, Hardness, Juiciness, LabelSet, SampleId};
use crate::embedtrain::{
    embed_dataset, forward_cached, init_layers, train_embedding, zero_grads, EmbeddingModel,
    EncoderSpec, Layer, OptState, OptimizerConfig, Tensor, TrainConfig,
};
use crate::error::{Error, Result};
use crate::features::{
    pca_fit, pca_transform, proprio_features, FeatureMatrix, FeatureVector, PcaTarget,
};
use crate::tripletmine::{mine_feature_knn, mine_label_match, NeighborIndex};

/// Results published for the original robot-collected dataset (hundreds of
/// interaction trials per category plus a pretrained vision backbone).
/// They are reference points for report readers, not test oracles: the
/// desk-scale synthetic runs in this crate are not expected to match them.
pub const REFERENCE_FOOD_TYPE_ACCURACY_F: f64 = 92.0;
pub const REFERENCE_SLICE_WIDTH_RMSE_MM_P: f64 = 7.9;
pub const REFERENCE_HARDNESS_ACCURACY_APLAY_P: f64 = 99.7;

/// Trials used for testing in the non-leave-one-out split; all other
/// trials train.
pub const TEST_TRIAL: u32 = 5;

// ---------------------------------------------------------------------------
// Tasks and targets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FoodType,
    Hardness,
    Juiciness,
    SliceType,
    /// Regression on the final gripper width, in millimeters.
    SliceWidth,
    Cooked,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::FoodType => "food_type",
            Task::Hardness => "hardness",
            Task::Juiciness => "juiciness",
            Task::SliceType => "slice_type",
            Task::SliceWidth => "slice_width",
            Task::Cooked => "cooked",
        }
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Task::SliceWidth)
    }

    /// The five-column layout of the main results grid.
    pub fn report_tasks() -> Vec<Task> {
        vec![
            Task::FoodType,
            Task::Hardness,
            Task::Juiciness,
            Task::SliceType,
            Task::SliceWidth,
        ]
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "food_type" => Ok(Task::FoodType),
            "hardness" => Ok(Task::Hardness),
            "juiciness" => Ok(Task::Juiciness),
            "slice_type" => Ok(Task::SliceType),
            "slice_width" => Ok(Task::SliceWidth),
            "cooked" => Ok(Task::Cooked),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// Per-sample prediction targets for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes {
        values: Vec<usize>,
        n_classes: usize,
        names: Vec<String>,
    },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { values, .. } => values.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row subset keeping the global class space.
    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes {
                values,
                n_classes,
                names,
            } => Targets::Classes {
                values: idx.iter().map(|&i| values[i]).collect(),
                n_classes: *n_classes,
                names: names.clone(),
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

fn hardness_class(h: Hardness) -> usize {
    match h {
        Hardness::Soft => 0,
        Hardness::Medium => 1,
        Hardness::Hard => 2,
    }
}

fn juiciness_class(j: Juiciness) -> usize {
    match j {
        Juiciness::Dry => 0,
        Juiciness::Medium => 1,
        Juiciness::Juicy => 2,
    }
}

/// Extracts the targets a task needs from loaded samples; the class space
/// is computed over the whole list so fold subsets stay consistent.
pub fn task_targets(samples: &[FoodSample], task: Task) -> Result<Targets> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples for target extraction".into()));
    }
    let need_labels = |missing_field: &str| -> Result<Vec<LabelSet>> {
        let missing: Vec<String> = samples
            .iter()
            .filter(|s| s.labels.is_none())
            .map(|s| s.id.to_string())
            .collect();
        if missing.is_empty() {
            Ok(samples.iter().map(|s| s.labels.unwrap()).collect())
        } else {
            Err(Error::MissingModality {
                modality: missing_field.to_string(),
                samples: missing,
            })
        }
    };
    match task {
        Task::FoodType => {
            let mut cats: Vec<String> = samples.iter().map(|s| s.id.food_category.clone()).collect();
            cats.sort();
            cats.dedup();
            let values = samples
                .iter()
                .map(|s| cats.binary_search(&s.id.food_category).unwrap())
                .collect();
            Ok(Targets::Classes {
                values,
                n_classes: cats.len(),
                names: cats,
            })
        }
        Task::SliceType => Ok(Targets::Classes {
            values: samples.iter().map(|s| (s.id.slice_type - 1) as usize).collect(),
            n_classes: 14,
            names: (1..=14).map(|i| i.to_string()).collect(),
        }),
        Task::Hardness => {
            let labels = need_labels("hardness label")?;
            Ok(Targets::Classes {
                values: labels.iter().map(|l| hardness_class(l.hardness)).collect(),
                n_classes: 3,
                names: vec!["soft".into(), "medium".into(), "hard".into()],
            })
        }
        Task::Juiciness => {
            let labels = need_labels("juiciness label")?;
            Ok(Targets::Classes {
                values: labels.iter().map(|l| juiciness_class(l.juiciness)).collect(),
                n_classes: 3,
                names: vec!["dry".into(), "medium".into(), "juicy".into()],
            })
        }
        Task::Cooked => {
            let labels = need_labels("cooked label")?;
            let missing: Vec<String> = samples
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.cooked.is_none())
                .map(|(s, _)| s.id.to_string())
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingModality {
                    modality: "cooked label".into(),
                    samples: missing,
                });
            }
            Ok(Targets::Classes {
                values: labels.iter().map(|l| usize::from(l.cooked.unwrap())).collect(),
                n_classes: 2,
                names: vec!["raw".into(), "cooked".into()],
            })
        }
        Task::SliceWidth => {
            let missing: Vec<String> = samples
                .iter()
                .filter(|s| s.gripper_width.is_none())
                .map(|s| s.id.to_string())
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingModality {
                    modality: "gripper width".into(),
                    samples: missing,
                });
            }
            Ok(Targets::Values(
                samples.iter().map(|s| s.gripper_width.unwrap()).collect(),
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Perceptron heads

/// Configuration for a 3-layer perceptron head (exactly two hidden layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: [usize; 2],
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            epochs: 150,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden[0] == 0 || self.hidden[1] == 0 {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classify { n_classes: usize },
    Regress,
}

/// A trained network with a task-shaped output layer: softmax plus
/// cross-entropy for classification, a linear unit plus squared error for
/// regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub spec: EncoderSpec,
    pub layers: Vec<Layer>,
    pub kind: HeadKind,
    /// Regression targets are standardized for training; predictions are
    /// mapped back through value * target_scale + target_mean.
    pub target_mean: f64,
    pub target_scale: f64,
    pub loss_history: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss and output-layer gradient for one sample.
fn output_loss_grad(kind: HeadKind, out: &[f64], targets: &Targets, row: usize) -> (f64, Vec<f64>) {
    match (kind, targets) {
        (HeadKind::Classify { .. }, Targets::Classes { values, .. }) => {
            let y = values[row];
            let p = softmax(out);
            let loss = -p[y].max(1e-300).ln();
            let mut grad = p;
            grad[y] -= 1.0;
            (loss, grad)
        }
        (HeadKind::Regress, Targets::Values(v)) => {
            let diff = out[0] - v[row];
            (diff * diff, vec![2.0 * diff])
        }
        _ => unreachable!("kind/target pairing is checked at construction"),
    }
}

/// Supervised mini-batch training of an arbitrary layer stack whose final
/// dense layer is the task output. Deterministic given the seed.
pub fn train_supervised(
    inputs: &[Tensor],
    targets: &Targets,
    kind: HeadKind,
    spec: &EncoderSpec,
    cfg: &HeadConfig,
) -> Result<HeadModel> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyInput("no training inputs".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::IdentifierMismatch(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    match (kind, targets) {
        (HeadKind::Classify { n_classes }, Targets::Classes { values, .. }) => {
            if spec.embedding_dim != n_classes {
                return Err(Error::DimensionMismatch {
                    expected: n_classes,
                    got: spec.embedding_dim,
                });
            }
            if let Some(&bad) = values.iter().find(|&&v| v >= n_classes) {
                return Err(Error::Config(format!(
                    "class index {bad} out of range for {n_classes} classes"
                )));
            }
        }
        (HeadKind::Regress, Targets::Values(_)) => {
            if spec.embedding_dim != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: spec.embedding_dim,
                });
            }
        }
        _ => return Err(Error::Config("task kind does not match target kind".into())),
    }
    // Standardized regression targets keep the optimizer's step budget
    // independent of the target's unit and offset.
    let (targets, target_mean, target_scale) = match targets {
        Targets::Values(v) => {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / v.len() as f64;
            let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            (
                Targets::Values(v.iter().map(|t| (t - mean) / scale).collect()),
                mean,
                scale,
            )
        }
        other => (other.clone(), 0.0, 1.0),
    };
    let targets = &targets;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = init_layers(spec, &mut rng)?;
    let mut opt = OptState::new(cfg.optimizer, &layers);
    let mut loss_history = Vec::new();
    let n = inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(&layers);
            let mut total = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &row in batch {
                let acts = forward_cached(&layers, &inputs[row])?;
                let (loss, out_grad) =
                    output_loss_grad(kind, &acts.last().unwrap().data, targets, row);
                total += loss;
                let mut grad = Tensor::from_vec(out_grad.iter().map(|g| g * scale).collect());
                for (li, layer) in layers.iter().enumerate().rev() {
                    grad = layer.backward(&acts[li], &grad, &mut grads[li]);
                }
            }
            opt.step(&mut layers, &grads);
            loss_history.push(total * scale);
        }
    }
    Ok(HeadModel {
        spec: spec.clone(),
        layers,
        kind,
        target_mean,
        target_scale,
        loss_history,
    })
}

fn head_spec(in_dim: usize, hidden: [usize; 2], out_dim: usize) -> EncoderSpec {
    use crate::embedtrain::{InputKind, LayerSpec};
    EncoderSpec {
        input: InputKind::Vector { dim: in_dim },
        layers: vec![
            LayerSpec::Dense { out_dim: hidden[0] },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: hidden[1] },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim },
        ],
        embedding_dim: out_dim,
    }
}

/// Trains a perceptron head on embedding rows.
pub fn train_head(
    e: &FeatureMatrix,
    targets: &Targets,
    task: Task,
    cfg: &HeadConfig,
) -> Result<HeadModel> {
    if e.n_samples() != targets.len() {
        return Err(Error::IdentifierMismatch(format!(
            "{} embedding rows vs {} targets",
            e.n_samples(),
            targets.len()
        )));
    }
    let kind = match (task.is_regression(), targets) {
        (false, Targets::Classes { n_classes, .. }) => HeadKind::Classify {
            n_classes: *n_classes,
        },
        (true, Targets::Values(_)) => HeadKind::Regress,
        _ => return Err(Error::Config("task kind does not match target kind".into())),
    };
    let out_dim = match kind {
        HeadKind::Classify { n_classes } => n_classes,
        HeadKind::Regress => 1,
    };
    let spec = head_spec(e.n_features(), cfg.hidden, out_dim);
    let inputs: Vec<Tensor> = (0..e.n_samples())
        .map(|i| Tensor::from_vec(e.row(i)))
        .collect();
    train_supervised(&inputs, targets, kind, &spec, cfg)
}

fn network_output(model: &HeadModel, input: &Tensor) -> Result<Vec<f64>> {
    let mut value = input.clone();
    for layer in &model.layers {
        value = layer.forward(&value)?;
    }
    Ok(value.data)
}

/// Argmax class predictions (ties go to the lower index).
pub fn predict_classes(model: &HeadModel, inputs: &[Tensor]) -> Result<Vec<usize>> {
    inputs
        .iter()
        .map(|input| {
            let out = network_output(model, input)?;
            let mut best = 0;
            for (i, &v) in out.iter().enumerate() {
                if v > out[best] {
                    best = i;
                }
            }
            Ok(best)
        })
        .collect()
}

pub fn predict_values(model: &HeadModel, inputs: &[Tensor]) -> Result<Vec<f64>> {
    inputs
        .iter()
        .map(|input| {
            Ok(network_output(model, input)?[0] * model.target_scale + model.target_mean)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    AccuracyPercent(f64),
    RmseMm(f64),
}

impl MetricValue {
    pub fn value(self) -> f64 {
        match self {
            MetricValue::AccuracyPercent(v) | MetricValue::RmseMm(v) => v,
        }
    }
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::AccuracyPercent(v) => write!(f, "{v:.1}%"),
            MetricValue::RmseMm(v) => write!(f, "{v:.2}mm"),
        }
    }
}

pub fn accuracy_percent(pred: &[usize], truth: &[usize]) -> f64 {
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    100.0 * correct as f64 / truth.len() as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let mse: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / truth.len() as f64;
    mse.sqrt()
}

/// RMSE of always predicting the mean of the training targets.
pub fn mean_predictor_rmse(train: &[f64], test: &[f64]) -> f64 {
    let mean: f64 = train.iter().sum::<f64>() / train.len() as f64;
    rmse(&vec![mean; test.len()], test)
}

/// Accuracy (percent) for classification, RMSE (mm) for regression.
pub fn evaluate_task(
    model: &HeadModel,
    e_test: &FeatureMatrix,
    targets_test: &Targets,
) -> Result<MetricValue> {
    if e_test.n_samples() == 0 {
        return Err(Error::EmptyInput("empty test set".into()));
    }
    if e_test.n_samples() != targets_test.len() {
        return Err(Error::IdentifierMismatch(format!(
            "{} test rows vs {} targets",
            e_test.n_samples(),
            targets_test.len()
        )));
    }
    let inputs: Vec<Tensor> = (0..e_test.n_samples())
        .map(|i| Tensor::from_vec(e_test.row(i)))
        .collect();
    match targets_test {
        Targets::Classes { values, .. } => {
            let pred = predict_classes(model, &inputs)?;
            Ok(MetricValue::AccuracyPercent(accuracy_percent(&pred, values)))
        }
        Targets::Values(v) => {
            let pred = predict_values(model, &inputs)?;
            Ok(MetricValue::RmseMm(rmse(&pred, v)))
        }
    }
}

// ---------------------------------------------------------------------------
// Embedding sources (metrics) and the feature pipeline

/// The similarity metric used to mine triplets for an embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Same food category (label match).
    F,
    /// Same slice type (label match).
    S,
    /// Nearest neighbors in PCA-reduced playing-audio features.
    APlay,
    /// Nearest neighbors in PCA-reduced cutting-audio features.
    ACut,
    /// Nearest neighbors in raw proprioceptive features.
    P,
    /// Nearest neighbors in concatenated playing-audio + proprio features.
    APlayP,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::F => "F",
            Metric::S => "S",
            Metric::APlay => "A_play",
            Metric::ACut => "A_cut",
            Metric::P => "P",
            Metric::APlayP => "A_play+P",
        }
    }

    pub fn all() -> Vec<Metric> {
        vec![
            Metric::F,
            Metric::S,
            Metric::APlay,
            Metric::ACut,
            Metric::P,
            Metric::APlayP,
        ]
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Metric::F),
            "S" => Ok(Metric::S),
            "A_play" => Ok(Metric::APlay),
            "A_cut" => Ok(Metric::ACut),
            "P" => Ok(Metric::P),
            "A_play+P" => Ok(Metric::APlayP),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Which modality feeds the embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    /// Overhead image through the convolutional trunk.
    Image,
    /// Aggregated playing-audio features through a dense stack.
    AudioPlay,
    /// Aggregated cutting-audio features through a dense stack.
    AudioCut,
    /// Proprioceptive features through a dense stack.
    Proprio,
}

/// Per-sample features extracted once; nothing here mixes information
/// across samples, so fold subsets stay leakage-free.
#[derive(Debug, Clone)]
pub struct RawFeatures {
    pub ids: Vec<SampleId>,
    pub labels: Vec<LabelSet>,
    pub images: Vec<Tensor>,
    pub image_size: (usize, usize),
    /// Aggregated MFCC features, before any PCA.
    pub mfcc_play: FeatureMatrix,
    pub mfcc_cut: FeatureMatrix,
    /// (z_f, delta_z, w_g) rows.
    pub proprio: FeatureMatrix,
}

impl RawFeatures {
    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self.ids.iter().map(|id| id.food_category.clone()).collect();
        cats.sort();
        cats.dedup();
        cats
    }
}

/// Extracts per-sample features for every modality; samples missing any
/// required modality are reported by identifier.
pub fn extract_features(
    samples: &[FoodSample],
    mfcc_cfg: &MfccConfig,
    agg: Aggregation,
) -> Result<RawFeatures> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to extract features from".into()));
    }
    for (modality, probe) in [
        ("playing audio", &(|s: &FoodSample| s.audio_play.is_some()) as &dyn Fn(&FoodSample) -> bool),
        ("cutting audio", &|s| s.audio_cut.is_some()),
        ("overhead image", &|s| s.image.is_some()),
        ("proprioception", &|s| s.proprio.is_some()),
        ("labels", &|s| s.labels.is_some()),
    ] {
        let missing: Vec<String> = samples
            .iter()
            .filter(|s| !probe(s))
            .map(|s| s.id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingModality {
                modality: modality.into(),
                samples: missing,
            });
        }
    }
    let first_img = samples[0].image.as_ref().unwrap();
    let image_size = (first_img.width, first_img.height);
    let mut images = Vec::with_capacity(samples.len());
    let mut play_rows = Vec::with_capacity(samples.len());
    let mut cut_rows = Vec::with_capacity(samples.len());
    let mut proprio_rows = Vec::with_capacity(samples.len());
    for s in samples {
        let img = s.image.as_ref().unwrap();
        if (img.width, img.height) != image_size {
            return Err(Error::Config(format!(
                "image size {}x{} for {} differs from {}x{}",
                img.width, img.height, s.id, image_size.0, image_size.1
            )));
        }
        images.push(Tensor::from_image(img));
        let play = aggregate(&mfcc(s.audio_play.as_ref().unwrap(), mfcc_cfg)?, agg)?;
        play_rows.push(FeatureVector::new(s.id.clone(), "audio_play", play));
        let cut = aggregate(&mfcc(s.audio_cut.as_ref().unwrap(), mfcc_cfg)?, agg)?;
        cut_rows.push(FeatureVector::new(s.id.clone(), "audio_cut", cut));
        let pf = proprio_features(s.proprio.as_ref().unwrap())?;
        proprio_rows.push(pf.to_vector(s.id.clone()));
    }
    Ok(RawFeatures {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        labels: samples.iter().map(|s| s.labels.unwrap()).collect(),
        images,
        image_size,
        mfcc_play: FeatureMatrix::from_rows(play_rows)?,
        mfcc_cut: FeatureMatrix::from_rows(cut_rows)?,
        proprio: FeatureMatrix::from_rows(proprio_rows)?,
    })
}

fn subset_matrix(m: &FeatureMatrix, idx: &[usize]) -> FeatureMatrix {
    let mut data = ndarray::Array2::zeros((idx.len(), m.n_features()));
    for (r, &i) in idx.iter().enumerate() {
        for c in 0..m.n_features() {
            data[[r, c]] = m.data[[i, c]];
        }
    }
    FeatureMatrix {
        ids: idx.iter().map(|&i| m.ids[i].clone()).collect(),
        columns: m.columns.clone(),
        data,
    }
}

/// Everything needed to run one embedding-plus-head pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: EncoderInput,
    pub embedding_dim: usize,
    /// Neighbor count for feature-space mining.
    pub mining_n: usize,
    /// PCA target for the audio mining spaces.
    pub pca: PcaTarget,
    pub train: TrainConfig,
    pub head: HeadConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: EncoderInput::Image,
            embedding_dim: 32,
            mining_n: crate::tripletmine::DEFAULT_N_NEIGHBORS,
            pca: PcaTarget::default(),
            train: TrainConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

fn encoder_spec_for(raw: &RawFeatures, input: EncoderInput, embedding_dim: usize) -> EncoderSpec {
    match input {
        EncoderInput::Image => {
            EncoderSpec::default_image(raw.image_size.0, raw.image_size.1, embedding_dim)
        }
        EncoderInput::AudioPlay => {
            EncoderSpec::default_vector(raw.mfcc_play.n_features(), embedding_dim)
        }
        EncoderInput::AudioCut => {
            EncoderSpec::default_vector(raw.mfcc_cut.n_features(), embedding_dim)
        }
        EncoderInput::Proprio => {
            EncoderSpec::default_vector(raw.proprio.n_features(), embedding_dim)
        }
    }
}

fn input_tensors(raw: &RawFeatures, input: EncoderInput, idx: &[usize]) -> Vec<Tensor> {
    match input {
        EncoderInput::Image => idx.iter().map(|&i| raw.images[i].clone()).collect(),
        EncoderInput::AudioPlay => idx
            .iter()
            .map(|&i| Tensor::from_vec(raw.mfcc_play.row(i)))
            .collect(),
        EncoderInput::AudioCut => idx
            .iter()
            .map(|&i| Tensor::from_vec(raw.mfcc_cut.row(i)))
            .collect(),
        EncoderInput::Proprio => idx
            .iter()
            .map(|&i| Tensor::from_vec(raw.proprio.row(i)))
            .collect(),
    }
}

/// Builds the triplet index for a metric over the given subset. Feature
/// spaces (and their PCA reductions) are computed from the subset only.
pub fn mine_metric(
    raw: &RawFeatures,
    idx: &[usize],
    metric: Metric,
    cfg: &PipelineConfig,
) -> Result<NeighborIndex> {
    let pca_space = |m: &FeatureMatrix| -> Result<FeatureMatrix> {
        let sub = subset_matrix(m, idx);
        let model = pca_fit(&sub, cfg.pca, true)?;
        pca_transform(&model, &sub)
    };
    match metric {
        Metric::F => {
            let labels: Vec<&str> = idx
                .iter()
                .map(|&i| raw.ids[i].food_category.as_str())
                .collect();
            mine_label_match(&labels)
        }
        Metric::S => {
            let labels: Vec<u32> = idx.iter().map(|&i| raw.ids[i].slice_type).collect();
            mine_label_match(&labels)
        }
        Metric::APlay => mine_feature_knn(&pca_space(&raw.mfcc_play)?, cfg.mining_n),
        Metric::ACut => mine_feature_knn(&pca_space(&raw.mfcc_cut)?, cfg.mining_n),
        Metric::P => mine_feature_knn(&subset_matrix(&raw.proprio, idx), cfg.mining_n),
        Metric::APlayP => {
            let play = pca_space(&raw.mfcc_play)?;
            let proprio = subset_matrix(&raw.proprio, idx);
            mine_feature_knn(&FeatureMatrix::concat(&[&play, &proprio])?, cfg.mining_n)
        }
    }
}

/// Trains one embedding network on the subset with triplets from `metric`.
pub fn train_metric_embedding(
    raw: &RawFeatures,
    idx: &[usize],
    metric: Metric,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EmbeddingModel> {
    let index = mine_metric(raw, idx, metric, cfg)?;
    let inputs = input_tensors(raw, cfg.input, idx);
    let ids: Vec<SampleId> = idx.iter().map(|i| raw.ids[*i].clone()).collect();
    let spec = encoder_spec_for(raw, cfg.input, cfg.embedding_dim);
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    train_embedding(&ids, &inputs, &index, &spec, &train_cfg)
}

fn embed_subset(
    model: &EmbeddingModel,
    raw: &RawFeatures,
    input: EncoderInput,
    idx: &[usize],
    tag: &str,
) -> Result<FeatureMatrix> {
    let inputs = input_tensors(raw, input, idx);
    let ids: Vec<SampleId> = idx.iter().map(|i| raw.ids[*i].clone()).collect();
    embed_dataset(model, &ids, &inputs, tag)
}

/// Train/test indices for the trial-held-out split: the test trial's
/// samples test, everything else trains.
pub fn trial_split(ids: &[SampleId]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        if id.trial == TEST_TRIAL {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    if test.is_empty() {
        return Err(Error::Config(format!(
            "no samples with trial {TEST_TRIAL} to test on"
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("no training samples in trial split".into()));
    }
    Ok((train, test))
}

fn derive_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over base + salt, so per-fold/per-row seeds are
    // decorrelated but reproducible.
    let mut z = base.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Leave-one-category-out protocol

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub n_train: usize,
    pub n_test: usize,
    pub value: Option<MetricValue>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub task: Task,
    pub metric: Metric,
    pub folds: Vec<FoldResult>,
    /// Unweighted mean over non-errored folds.
    pub mean: Option<f64>,
}

/// One fold per food category: the held-out category is excluded from
/// triplet mining, embedding training, and head training, and only tested.
/// The embedding network is retrained from scratch every fold.
pub fn leave_one_out(
    samples: &[FoodSample],
    raw: &RawFeatures,
    metric: Metric,
    task: Task,
    cfg: &PipelineConfig,
) -> Result<LooReport> {
    let categories = raw.categories();
    if categories.len() < 2 {
        return Err(Error::Config(
            "leave-one-out needs at least 2 food categories".into(),
        ));
    }
    let targets = task_targets(samples, task)?;
    let mut folds = Vec::with_capacity(categories.len());
    for (fold, held_out) in categories.iter().enumerate() {
        let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
        for (i, id) in raw.ids.iter().enumerate() {
            if &id.food_category == held_out {
                test_idx.push(i);
            } else {
                train_idx.push(i);
            }
        }
        // Leakage guard: no identifier may appear on both sides.
        let train_ids: std::collections::BTreeSet<&SampleId> =
            train_idx.iter().map(|&i| &raw.ids[i]).collect();
        assert!(
            test_idx.iter().all(|&i| !train_ids.contains(&raw.ids[i])),
            "train/test identifier overlap in fold {held_out}"
        );
        let outcome = (|| -> Result<MetricValue> {
            if test_idx.is_empty() {
                return Err(Error::EmptyInput("no test samples in fold".into()));
            }
            let seed = derive_seed(cfg.train.seed, fold as u64);
            let model = train_metric_embedding(raw, &train_idx, metric, cfg, seed)?;
            let e_train = embed_subset(&model, raw, cfg.input, &train_idx, metric.name())?;
            let e_test = embed_subset(&model, raw, cfg.input, &test_idx, metric.name())?;
            let head_cfg = HeadConfig {
                seed: derive_seed(cfg.head.seed, fold as u64 ^ 0x5EED),
                ..cfg.head.clone()
            };
            let head = train_head(&e_train, &targets.select(&train_idx), task, &head_cfg)?;
            evaluate_task(&head, &e_test, &targets.select(&test_idx))
        })();
        folds.push(match outcome {
            Ok(value) => FoldResult {
                held_out: held_out.clone(),
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                value: Some(value),
                error: None,
            },
            Err(e) => FoldResult {
                held_out: held_out.clone(),
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                value: None,
                error: Some(e.to_string()),
            },
        });
    }
    let ok: Vec<f64> = folds.iter().filter_map(|f| f.value.map(MetricValue::value)).collect();
    let mean = if ok.is_empty() {
        None
    } else {
        Some(ok.iter().sum::<f64>() / ok.len() as f64)
    };
    Ok(LooReport {
        task,
        metric,
        folds,
        mean,
    })
}

// ---------------------------------------------------------------------------
// Full report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub task: String,
    pub value: Option<MetricValue>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub cells: Vec<ReportCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub category: u32,
    pub cooked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub metrics: Vec<String>,
    pub tasks: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// 3-component PCA projections of each metric's embeddings.
    pub scatter: BTreeMap<String, Vec<ScatterRow>>,
    /// Published reference results for context (not desk-reproducible).
    pub reference: BTreeMap<String, f64>,
}

fn reference_table() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("F/food_type/accuracy_percent".into(), REFERENCE_FOOD_TYPE_ACCURACY_F),
        ("P/slice_width/rmse_mm".into(), REFERENCE_SLICE_WIDTH_RMSE_MM_P),
        (
            "A_play+P/hardness/accuracy_percent".into(),
            REFERENCE_HARDNESS_ACCURACY_APLAY_P,
        ),
    ])
}

/// 3-component PCA projection of embeddings for external scatter plotting.
/// Categories are numbered by their sorted order.
pub fn pca_scatter(e: &FeatureMatrix, labels: &[LabelSet]) -> Result<Vec<ScatterRow>> {
    if e.n_samples() != labels.len() {
        return Err(Error::IdentifierMismatch(format!(
            "{} embedding rows vs {} label sets",
            e.n_samples(),
            labels.len()
        )));
    }
    let k = 3.min(e.n_features());
    let model = pca_fit(e, PcaTarget::Components(k), false)?;
    let proj = pca_transform(&model, e)?;
    let mut cats: Vec<&str> = e.ids.iter().map(|id| id.food_category.as_str()).collect();
    cats.sort();
    cats.dedup();
    Ok((0..proj.n_samples())
        .map(|i| {
            let row = proj.row(i);
            ScatterRow {
                x: row[0],
                y: *row.get(1).unwrap_or(&0.0),
                z: *row.get(2).unwrap_or(&0.0),
                category: cats
                    .binary_search(&e.ids[i].food_category.as_str())
                    .unwrap() as u32,
                cooked: labels[i].cooked.unwrap_or(false),
            }
        })
        .collect())
}

/// Runs the whole evaluation grid on the trial split: one embedding
/// network per metric row, one head per (row, task) cell, plus the two
/// baselines when requested. Cell failures are recorded, not fatal.
pub fn full_report(
    samples: &[FoodSample],
    raw: &RawFeatures,
    metrics: &[Metric],
    tasks: &[Task],
    cfg: &PipelineConfig,
    with_baselines: bool,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::Config("no tasks requested".into()));
    }
    if metrics.is_empty() && !with_baselines {
        return Err(Error::Config("no embedding metrics requested".into()));
    }
    let (train_idx, test_idx) = trial_split(&raw.ids)?;
    let all_idx: Vec<usize> = (0..raw.n_samples()).collect();
    let targets: Vec<Result<Targets>> =
        tasks.iter().map(|&t| task_targets(samples, t)).collect();
    let mut rows = Vec::new();
    let mut scatter = BTreeMap::new();

    for (mi, &metric) in metrics.iter().enumerate() {
        let seed = derive_seed(cfg.train.seed, 1000 + mi as u64);
        let mut cells = Vec::new();
        match train_metric_embedding(raw, &train_idx, metric, cfg, seed) {
            Ok(model) => {
                let e_train = embed_subset(&model, raw, cfg.input, &train_idx, metric.name())?;
                let e_test = embed_subset(&model, raw, cfg.input, &test_idx, metric.name())?;
                for (ti, &task) in tasks.iter().enumerate() {
                    let cell = (|| -> Result<MetricValue> {
                        let t = targets[ti].as_ref().map_err(|e| Error::Other(e.to_string()))?;
                        let head_cfg = HeadConfig {
                            seed: derive_seed(cfg.head.seed, (mi * 100 + ti) as u64),
                            ..cfg.head.clone()
                        };
                        let head =
                            train_head(&e_train, &t.select(&train_idx), task, &head_cfg)?;
                        evaluate_task(&head, &e_test, &t.select(&test_idx))
                    })();
                    cells.push(to_cell(task, cell));
                }
                let e_all = embed_subset(&model, raw, cfg.input, &all_idx, metric.name())?;
                scatter.insert(metric.name().to_string(), pca_scatter(&e_all, &raw.labels)?);
            }
            Err(e) => {
                let msg = e.to_string();
                for &task in tasks {
                    cells.push(ReportCell {
                        task: task.name().into(),
                        value: None,
                        error: Some(msg.clone()),
                    });
                }
            }
        }
        rows.push(ReportRow {
            source: metric.name().into(),
            cells,
        });
    }

    if with_baselines {
        // End-to-end supervised network on images, per task.
        let mut cells = Vec::new();
        for (ti, &task) in tasks.iter().enumerate() {
            let cell = (|| -> Result<MetricValue> {
                let t = targets[ti].as_ref().map_err(|e| Error::Other(e.to_string()))?;
                let (kind, out_dim) = match (task.is_regression(), t) {
                    (false, Targets::Classes { n_classes, .. }) => {
                        (HeadKind::Classify { n_classes: *n_classes }, *n_classes)
                    }
                    (true, Targets::Values(_)) => (HeadKind::Regress, 1),
                    _ => return Err(Error::Config("task/target mismatch".into())),
                };
                let spec = EncoderSpec::default_image(raw.image_size.0, raw.image_size.1, out_dim);
                let head_cfg = HeadConfig {
                    seed: derive_seed(cfg.head.seed, 7000 + ti as u64),
                    ..cfg.head.clone()
                };
                let inputs = input_tensors(raw, EncoderInput::Image, &train_idx);
                let net =
                    train_supervised(&inputs, &t.select(&train_idx), kind, &spec, &head_cfg)?;
                let test_inputs = input_tensors(raw, EncoderInput::Image, &test_idx);
                match t.select(&test_idx) {
                    Targets::Classes { values, .. } => {
                        let pred = predict_classes(&net, &test_inputs)?;
                        Ok(MetricValue::AccuracyPercent(accuracy_percent(&pred, &values)))
                    }
                    Targets::Values(v) => {
                        let pred = predict_values(&net, &test_inputs)?;
                        Ok(MetricValue::RmseMm(rmse(&pred, &v)))
                    }
                }
            })();
            cells.push(to_cell(task, cell));
        }
        rows.push(ReportRow {
            source: "vision_direct".into(),
            cells,
        });

        // Head straight on the playing-audio features, per task.
        let mut cells = Vec::new();
        for (ti, &task) in tasks.iter().enumerate() {
            let cell = (|| -> Result<MetricValue> {
                let t = targets[ti].as_ref().map_err(|e| Error::Other(e.to_string()))?;
                let head_cfg = HeadConfig {
                    seed: derive_seed(cfg.head.seed, 8000 + ti as u64),
                    ..cfg.head.clone()
                };
                let head = train_head(
                    &subset_matrix(&raw.mfcc_play, &train_idx),
                    &t.select(&train_idx),
                    task,
                    &head_cfg,
                )?;
                evaluate_task(
                    &head,
                    &subset_matrix(&raw.mfcc_play, &test_idx),
                    &t.select(&test_idx),
                )
            })();
            cells.push(to_cell(task, cell));
        }
        rows.push(ReportRow {
            source: "audio_direct".into(),
            cells,
        });
    }

    Ok(EvalReport {
        config: cfg.clone(),
        metrics: metrics.iter().map(|m| m.name().to_string()).collect(),
        tasks: tasks.iter().map(|t| t.name().to_string()).collect(),
        rows,
        scatter,
        reference: reference_table(),
    })
}

fn to_cell(task: Task, outcome: Result<MetricValue>) -> ReportCell {
    match outcome {
        Ok(value) => ReportCell {
            task: task.name().into(),
            value: Some(value),
            error: None,
        },
        Err(e) => ReportCell {
            task: task.name().into(),
            value: None,
            error: Some(e.to_string()),
        },
    }
}

// ---------------------------------------------------------------------------
// Serialization

pub fn save_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// The grid as comma-separated text: one row per source, one column per
/// task, errored cells rendered as `error:<reason>`.
pub fn write_grid_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("source");
    for t in &report.tasks {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&row.source);
        for cell in &row.cells {
            out.push(',');
            match (&cell.value, &cell.error) {
                (Some(v), _) => out.push_str(&format!("{}", v.value())),
                (None, Some(e)) => out.push_str(&format!("error:{}", e.replace(',', ";"))),
                (None, None) => out.push_str("error:unknown"),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scatter rows as comma-separated (x, y, z, category, cooked) text.
pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut out = String::from("x,y,z,category,cooked\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.x, r.y, r.z, r.category, r.cooked));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_dataset, SynthSpec};
    use rand::Rng;

    fn small_dataset(n_categories: usize) -> Vec<FoodSample> {
        let spec = SynthSpec {
            n_categories,
            samples_per_category: 10,
            seed: 7,
            image_size: 16,
            audio: crate::synthgen::AudioSpec {
                sample_rate: 8000.0,
                duration: 0.128,
            },
            latents: Vec::new(),
        };
        generate_dataset(&spec).unwrap()
    }

    fn fast_cfg(input: EncoderInput) -> PipelineConfig {
        PipelineConfig {
            input,
            embedding_dim: 8,
            mining_n: 5,
            train: TrainConfig {
                epochs: 4,
                batch_size: 16,
                ..Default::default()
            },
            head: HeadConfig {
                epochs: 60,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn targets_cover_all_tasks() {
        let samples = small_dataset(3);
        for task in [Task::FoodType, Task::Hardness, Task::Juiciness, Task::SliceType, Task::Cooked]
        {
            match task_targets(&samples, task).unwrap() {
                Targets::Classes { values, n_classes, names } => {
                    assert_eq!(values.len(), samples.len());
                    assert_eq!(names.len(), n_classes);
                    assert!(values.iter().all(|&v| v < n_classes));
                }
                Targets::Values(_) => panic!("expected classes for {task:?}"),
            }
        }
        match task_targets(&samples, Task::SliceWidth).unwrap() {
            Targets::Values(v) => {
                assert_eq!(v.len(), samples.len());
                // Millimeter scale, not meters.
                assert!(v.iter().all(|&w| (1.0..50.0).contains(&w)));
            }
            _ => panic!("expected regression targets"),
        }
    }

    #[test]
    fn missing_cooked_label_is_reported() {
        let mut samples = small_dataset(2);
        if let Some(l) = &mut samples[3].labels {
            l.cooked = None;
        }
        match task_targets(&samples, Task::Cooked) {
            Err(Error::MissingModality { modality, samples }) => {
                assert_eq!(modality, "cooked label");
                assert_eq!(samples.len(), 1);
            }
            other => panic!("expected missing-modality error, got {other:?}"),
        }
    }

    #[test]
    fn constant_target_head_memorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<FeatureVector> = (0..20)
            .map(|i| {
                FeatureVector::new(
                    SampleId::new("x", 1, i + 1),
                    "f",
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let e = FeatureMatrix::from_rows(rows).unwrap();
        let targets = Targets::Classes {
            values: vec![2; 20],
            n_classes: 3,
            names: vec!["a".into(), "b".into(), "c".into()],
        };
        let cfg = HeadConfig { epochs: 40, ..Default::default() };
        let head = train_head(&e, &targets, Task::Hardness, &cfg).unwrap();
        match evaluate_task(&head, &e, &targets).unwrap() {
            MetricValue::AccuracyPercent(a) => assert_eq!(a, 100.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separable_blobs_high_heldout_accuracy() {
        // Two blobs 10 sigma apart; train on 160, test on held-out 40.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            let center = 10.0 * c as f64;
            rows.push(FeatureVector::new(
                SampleId::new("x", 1, i + 1),
                "f",
                vec![center + rng.gen_range(-1.0..1.0), -center + rng.gen_range(-1.0..1.0)],
            ));
            classes.push(c as usize);
        }
        let e = FeatureMatrix::from_rows(rows).unwrap();
        let targets = Targets::Classes {
            values: classes,
            n_classes: 2,
            names: vec!["a".into(), "b".into()],
        };
        let train_idx: Vec<usize> = (0..160).collect();
        let test_idx: Vec<usize> = (160..200).collect();
        let cfg = HeadConfig { epochs: 60, ..Default::default() };
        let head = train_head(
            &subset_matrix(&e, &train_idx),
            &targets.select(&train_idx),
            Task::Hardness,
            &cfg,
        )
        .unwrap();
        match evaluate_task(&head, &subset_matrix(&e, &test_idx), &targets.select(&test_idx))
            .unwrap()
        {
            MetricValue::AccuracyPercent(a) => assert!(a >= 95.0, "accuracy {a}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_regression_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<FeatureVector> = (0..30)
            .map(|i| {
                FeatureVector::new(
                    SampleId::new("x", 1, i + 1),
                    "f",
                    (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let e = FeatureMatrix::from_rows(rows).unwrap();
        let c = 4.0;
        let targets = Targets::Values(vec![c; 30]);
        let cfg = HeadConfig { epochs: 300, ..Default::default() };
        let head = train_head(&e, &targets, Task::SliceWidth, &cfg).unwrap();
        match evaluate_task(&head, &e, &targets).unwrap() {
            MetricValue::RmseMm(r) => assert!(r < 1e-2 * c, "rmse {r}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perfect_predictions_metrics() {
        assert_eq!(accuracy_percent(&[0, 1, 2], &[0, 1, 2]), 100.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn null_predictor_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<usize> = (0..3000).map(|i| i % 3).collect();
        let pred: Vec<usize> = (0..3000).map(|_| rng.gen_range(0..3)).collect();
        let acc = accuracy_percent(&pred, &truth);
        assert!((acc - 100.0 / 3.0).abs() <= 3.0, "accuracy {acc}");
    }

    #[test]
    fn empty_test_set_errors() {
        let e = FeatureMatrix::from_rows(vec![FeatureVector::new(
            SampleId::new("x", 1, 1),
            "f",
            vec![0.0],
        )])
        .unwrap();
        let targets = Targets::Values(vec![1.0]);
        let cfg = HeadConfig { epochs: 1, ..Default::default() };
        let head = train_head(&e, &targets, Task::SliceWidth, &cfg).unwrap();
        let empty = FeatureMatrix {
            ids: vec![],
            columns: vec!["f[0]".into()],
            data: ndarray::Array2::zeros((0, 1)),
        };
        assert!(matches!(
            evaluate_task(&head, &empty, &Targets::Values(vec![])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn trial_split_partitions() {
        let samples = small_dataset(2);
        let ids: Vec<SampleId> = samples.iter().map(|s| s.id.clone()).collect();
        let (train, test) = trial_split(&ids).unwrap();
        assert_eq!(train.len() + test.len(), ids.len());
        assert!(test.iter().all(|&i| ids[i].trial == TEST_TRIAL));
        assert!(train.iter().all(|&i| ids[i].trial != TEST_TRIAL));
        assert_eq!(test.len(), 4); // 2 categories x 2 slices x 1 trial
    }

    #[test]
    fn loo_fold_structure() {
        let samples = small_dataset(3);
        let raw = extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd).unwrap();
        let cfg = fast_cfg(EncoderInput::Proprio);
        let report = leave_one_out(&samples, &raw, Metric::P, Task::Hardness, &cfg).unwrap();
        assert_eq!(report.folds.len(), 3);
        let mut held: Vec<&str> = report.folds.iter().map(|f| f.held_out.as_str()).collect();
        held.sort();
        held.dedup();
        assert_eq!(held.len(), 3);
        // Every sample tests exactly once across folds.
        let total_test: usize = report.folds.iter().map(|f| f.n_test).sum();
        assert_eq!(total_test, samples.len());
        let vals: Vec<f64> = report
            .folds
            .iter()
            .map(|f| f.value.unwrap().value())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((report.mean.unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn full_report_shape_and_errors() {
        let samples = small_dataset(3);
        let raw = extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd).unwrap();
        let cfg = fast_cfg(EncoderInput::AudioPlay);
        let report = full_report(
            &samples,
            &raw,
            &[Metric::F, Metric::P],
            &[Task::Hardness, Task::SliceWidth],
            &cfg,
            false,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_eq!(row.cells.len(), 2);
            for cell in &row.cells {
                assert!(cell.value.is_some() || cell.error.is_some());
            }
        }
        assert_eq!(report.scatter.len(), 2);
        for rows in report.scatter.values() {
            assert_eq!(rows.len(), samples.len());
        }
        assert!(matches!(
            full_report(&samples, &raw, &[Metric::F], &[], &cfg, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_round_trip_bytes() {
        let samples = small_dataset(2);
        let raw = extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd).unwrap();
        let cfg = fast_cfg(EncoderInput::Proprio);
        let report =
            full_report(&samples, &raw, &[Metric::P], &[Task::Hardness], &cfg, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report(&path, &report).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded, report);
        save_report(&path, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes1);
    }

    #[test]
    fn report_is_deterministic() {
        let samples = small_dataset(2);
        let raw = extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd).unwrap();
        let cfg = fast_cfg(EncoderInput::Proprio);
        let a = full_report(&samples, &raw, &[Metric::P], &[Task::Hardness], &cfg, false).unwrap();
        let b = full_report(&samples, &raw, &[Metric::P], &[Task::Hardness], &cfg, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scatter_rows_shape() {
        let samples = small_dataset(2);
        let raw = extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd).unwrap();
        let rows = pca_scatter(&raw.proprio, &raw.labels).unwrap();
        assert_eq!(rows.len(), samples.len());
        assert!(rows.iter().any(|r| r.category == 0));
        assert!(rows.iter().any(|r| r.category == 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.csv");
        write_scatter_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), samples.len() + 1);
        assert!(text.starts_with("x,y,z,category,cooked"));
    }

    #[test]
    fn missing_modality_lists_samples() {
        let mut samples = small_dataset(2);
        samples[0].image = None;
        samples[5].image = None;
        match extract_features(&samples, &MfccConfig::default(), Aggregation::MeanStd) {
            Err(Error::MissingModality { modality, samples }) => {
                assert_eq!(modality, "overhead image");
                assert_eq!(samples.len(), 2);
            }
            other => panic!("expected missing-modality error, got {other:?}"),
        }
    }
}
