//! Small differentiable encoder with hand-written forward and backward
//! passes, trained with a squared-L2 triplet loss. All math is in f64 so
//! finite-difference gradient checks are meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Image, SampleId};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tripletmine::{sample_triplets_with, NeighborIndex, Triplet};

/// Dense row-major n-dimensional value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Channels-first [3, h, w] layout from an interleaved RGB image.
    pub fn from_image(img: &Image) -> Self {
        let (h, w) = (img.height, img.width);
        let mut data = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[c * h * w + y * w + x] = img.pixels[(y * w + x) * 3 + c];
                }
            }
        }
        Self {
            shape: vec![3, h, w],
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Image { width: usize, height: usize },
    Vector { dim: usize },
}

/// Layer vocabulary of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 2, no padding.
    Conv { out_channels: usize },
    Relu,
    GlobalAvgPool,
    Dense { out_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input: InputKind,
    pub layers: Vec<LayerSpec>,
    pub embedding_dim: usize,
}

impl EncoderSpec {
    /// conv(8)-ReLU-conv(16)-ReLU-pool-dense(64)-ReLU-dense(32)-ReLU-dense(emb)
    pub fn default_image(width: usize, height: usize, embedding_dim: usize) -> Self {
        Self {
            input: InputKind::Image { width, height },
            layers: vec![
                LayerSpec::Conv { out_channels: 8 },
                LayerSpec::Relu,
                LayerSpec::Conv { out_channels: 16 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_dim: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: embedding_dim },
            ],
            embedding_dim,
        }
    }

    /// dense(64)-ReLU-dense(32)-ReLU-dense(emb)
    pub fn default_vector(dim: usize, embedding_dim: usize) -> Self {
        Self {
            input: InputKind::Vector { dim },
            layers: vec![
                LayerSpec::Dense { out_dim: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: embedding_dim },
            ],
            embedding_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(LayerSpec::Dense { out_dim }) if *out_dim == self.embedding_dim => Ok(()),
            _ => Err(Error::Config(
                "encoder must end with dense(embedding_dim) and no activation".into(),
            )),
        }
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        /// [out_c][in_c][3][3] row-major.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        in_dim: usize,
        out_dim: usize,
        /// [out][in] row-major.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;

fn conv_out(side: usize) -> usize {
    (side - KERNEL) / STRIDE + 1
}

impl Layer {
    /// Mutable references to this layer's parameter arrays, weights first.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                vec![weights, bias]
            }
            _ => vec![],
        }
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias, .. } => {
                vec![weights, bias]
            }
            _ => vec![],
        }
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                weights,
                bias,
            } => {
                let [c, h, w] = dims3(input)?;
                if c != *in_channels {
                    return Err(Error::DimensionMismatch {
                        expected: *in_channels,
                        got: c,
                    });
                }
                if h < KERNEL || w < KERNEL {
                    return Err(Error::Config(format!("input {h}x{w} smaller than kernel")));
                }
                let (oh, ow) = (conv_out(h), conv_out(w));
                let mut out = Tensor::zeros(vec![*out_channels, oh, ow]);
                for oc in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..c {
                                let wbase = ((oc * c) + ic) * KERNEL * KERNEL;
                                let ibase = ic * h * w;
                                for ky in 0..KERNEL {
                                    let iy = oy * STRIDE + ky;
                                    for kx in 0..KERNEL {
                                        let ix = ox * STRIDE + kx;
                                        acc += weights[wbase + ky * KERNEL + kx]
                                            * input.data[ibase + iy * w + ix];
                                    }
                                }
                            }
                            out.data[oc * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
                Ok(out)
            }
            Layer::Relu => Ok(Tensor::new(
                input.shape.clone(),
                input.data.iter().map(|&v| v.max(0.0)).collect(),
            )),
            Layer::GlobalAvgPool => {
                let [c, h, w] = dims3(input)?;
                let area = (h * w) as f64;
                let data = (0..c)
                    .map(|ic| input.data[ic * h * w..(ic + 1) * h * w].iter().sum::<f64>() / area)
                    .collect();
                Ok(Tensor::from_vec(data))
            }
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            } => {
                if input.data.len() != *in_dim {
                    return Err(Error::DimensionMismatch {
                        expected: *in_dim,
                        got: input.data.len(),
                    });
                }
                let data = (0..*out_dim)
                    .map(|o| {
                        bias[o]
                            + weights[o * in_dim..(o + 1) * in_dim]
                                .iter()
                                .zip(&input.data)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                    })
                    .collect();
                Ok(Tensor::from_vec(data))
            }
        }
    }

    /// Propagates the output gradient to the input and accumulates
    /// parameter gradients into `grads` (same layout as `params`).
    pub(crate) fn backward(&self, input: &Tensor, grad_out: &Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        match self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                weights,
                ..
            } => {
                let c = *in_channels;
                let [_, h, w] = [c, input.shape[1], input.shape[2]];
                let (oh, ow) = (conv_out(h), conv_out(w));
                let mut grad_in = Tensor::zeros(input.shape.clone());
                let (gw, gb) = {
                    let (a, b) = grads.split_at_mut(1);
                    (&mut a[0], &mut b[0])
                };
                for oc in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = grad_out.data[oc * oh * ow + oy * ow + ox];
                            gb[oc] += g;
                            for ic in 0..c {
                                let wbase = ((oc * c) + ic) * KERNEL * KERNEL;
                                let ibase = ic * h * w;
                                for ky in 0..KERNEL {
                                    let iy = oy * STRIDE + ky;
                                    for kx in 0..KERNEL {
                                        let ix = ox * STRIDE + kx;
                                        gw[wbase + ky * KERNEL + kx] +=
                                            g * input.data[ibase + iy * w + ix];
                                        grad_in.data[ibase + iy * w + ix] +=
                                            g * weights[wbase + ky * KERNEL + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::Relu => Tensor::new(
                input.shape.clone(),
                input
                    .data
                    .iter()
                    .zip(&grad_out.data)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            ),
            Layer::GlobalAvgPool => {
                let [c, h, w] = [input.shape[0], input.shape[1], input.shape[2]];
                let area = (h * w) as f64;
                let mut grad_in = Tensor::zeros(input.shape.clone());
                for ic in 0..c {
                    let g = grad_out.data[ic] / area;
                    for v in &mut grad_in.data[ic * h * w..(ic + 1) * h * w] {
                        *v = g;
                    }
                }
                grad_in
            }
            Layer::Dense {
                in_dim,
                out_dim,
                weights,
                ..
            } => {
                let mut grad_in = Tensor::zeros(input.shape.clone());
                let (gw, gb) = {
                    let (a, b) = grads.split_at_mut(1);
                    (&mut a[0], &mut b[0])
                };
                for o in 0..*out_dim {
                    let g = grad_out.data[o];
                    gb[o] += g;
                    for i in 0..*in_dim {
                        gw[o * in_dim + i] += g * input.data[i];
                        grad_in.data[i] += g * weights[o * in_dim + i];
                    }
                }
                grad_in
            }
        }
    }
}

fn dims3(t: &Tensor) -> Result<[usize; 3]> {
    if t.shape.len() == 3 {
        Ok([t.shape[0], t.shape[1], t.shape[2]])
    } else {
        Err(Error::Config(format!(
            "expected a 3-d tensor, got shape {:?}",
            t.shape
        )))
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

/// Builds parameterized layers from a spec, inferring shapes from the
/// input kind. Weights are uniform Glorot, biases zero.
pub fn init_layers(spec: &EncoderSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    spec.validate()?;
    let mut shape: Vec<usize> = match spec.input {
        InputKind::Image { width, height } => vec![3, height, width],
        InputKind::Vector { dim } => vec![dim],
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for ls in &spec.layers {
        let layer = match *ls {
            LayerSpec::Conv { out_channels } => {
                if shape.len() != 3 {
                    return Err(Error::Config("conv layer needs a 3-d input".into()));
                }
                let in_channels = shape[0];
                let fan = KERNEL * KERNEL;
                let weights = glorot_uniform(
                    rng,
                    out_channels * in_channels * fan,
                    in_channels * fan,
                    out_channels * fan,
                );
                let l = Layer::Conv2d {
                    in_channels,
                    out_channels,
                    weights,
                    bias: vec![0.0; out_channels],
                };
                shape = vec![out_channels, conv_out(shape[1]), conv_out(shape[2])];
                l
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::GlobalAvgPool => {
                if shape.len() != 3 {
                    return Err(Error::Config("pool layer needs a 3-d input".into()));
                }
                shape = vec![shape[0]];
                Layer::GlobalAvgPool
            }
            LayerSpec::Dense { out_dim } => {
                let in_dim = shape.iter().product();
                let weights = glorot_uniform(rng, out_dim * in_dim, in_dim, out_dim);
                shape = vec![out_dim];
                Layer::Dense {
                    in_dim,
                    out_dim,
                    weights,
                    bias: vec![0.0; out_dim],
                }
            }
        };
        layers.push(layer);
    }
    Ok(layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config("margin must be positive".into()));
        }
        let lr = match self.optimizer {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        };
        if lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trained encoder: spec, parameters and the per-step loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub spec: EncoderSpec,
    pub layers: Vec<Layer>,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
}

impl EmbeddingModel {
    pub fn init(spec: EncoderSpec, config: TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let layers = init_layers(&spec, rng)?;
        Ok(Self {
            spec,
            layers,
            config,
            loss_history: Vec::new(),
        })
    }
}

/// Runs the encoder on one input.
pub fn encoder_forward(model: &EmbeddingModel, input: &Tensor) -> Result<Vec<f64>> {
    check_input_shape(&model.spec, input)?;
    let mut value = input.clone();
    for layer in &model.layers {
        value = layer.forward(&value)?;
    }
    Ok(value.data)
}

fn check_input_shape(spec: &EncoderSpec, input: &Tensor) -> Result<()> {
    let expected: Vec<usize> = match spec.input {
        InputKind::Image { width, height } => vec![3, height, width],
        InputKind::Vector { dim } => vec![dim],
    };
    if input.shape != expected {
        return Err(Error::Config(format!(
            "input shape {:?} does not match encoder input {:?}",
            input.shape, expected
        )));
    }
    Ok(())
}

pub(crate) fn forward_cached(layers: &[Layer], input: &Tensor) -> Result<Vec<Tensor>> {
    let mut activations = Vec::with_capacity(layers.len() + 1);
    activations.push(input.clone());
    for layer in layers {
        let next = layer.forward(activations.last().unwrap())?;
        activations.push(next);
    }
    Ok(activations)
}

/// Squared-L2 triplet hinge: max(0, |ea-ep|^2 - |ea-en|^2 + margin).
pub fn triplet_loss(ea: &[f64], ep: &[f64], en: &[f64], margin: f64) -> Result<f64> {
    if ea.len() != ep.len() || ea.len() != en.len() {
        return Err(Error::DimensionMismatch {
            expected: ea.len(),
            got: ep.len().max(en.len()),
        });
    }
    let dp: f64 = ea.iter().zip(ep).map(|(a, p)| (a - p) * (a - p)).sum();
    let dn: f64 = ea.iter().zip(en).map(|(a, n)| (a - n) * (a - n)).sum();
    Ok((dp - dn + margin).max(0.0))
}

/// Loss plus gradients with respect to the three embeddings. The hinge
/// subgradient at zero is taken as zero.
pub fn triplet_loss_grad(
    ea: &[f64],
    ep: &[f64],
    en: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let loss = triplet_loss(ea, ep, en, margin)?;
    let d = ea.len();
    if loss <= 0.0 {
        return Ok((loss, vec![0.0; d], vec![0.0; d], vec![0.0; d]));
    }
    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    for i in 0..d {
        ga[i] = 2.0 * (en[i] - ep[i]);
        gp[i] = 2.0 * (ep[i] - ea[i]);
        gn[i] = 2.0 * (ea[i] - en[i]);
    }
    Ok((loss, ga, gp, gn))
}

pub(crate) fn zero_grads(layers: &[Layer]) -> Vec<Vec<Vec<f64>>> {
    layers
        .iter()
        .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
        .collect()
}

/// Mean triplet loss over a batch plus parameter gradients.
fn batch_loss_and_grads(
    layers: &[Layer],
    inputs: &[Tensor],
    triplets: &[Triplet],
    margin: f64,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let mut grads = zero_grads(layers);
    let mut total = 0.0;
    let scale = 1.0 / triplets.len() as f64;
    for t in triplets {
        let acts_a = forward_cached(layers, &inputs[t.anchor])?;
        let acts_p = forward_cached(layers, &inputs[t.positive])?;
        let acts_n = forward_cached(layers, &inputs[t.negative])?;
        let (loss, ga, gp, gn) = triplet_loss_grad(
            &acts_a.last().unwrap().data,
            &acts_p.last().unwrap().data,
            &acts_n.last().unwrap().data,
            margin,
        )?;
        total += loss;
        for (acts, g) in [(&acts_a, ga), (&acts_p, gp), (&acts_n, gn)] {
            let mut grad = Tensor::from_vec(g.iter().map(|v| v * scale).collect());
            for (li, layer) in layers.iter().enumerate().rev() {
                grad = layer.backward(&acts[li], &grad, &mut grads[li]);
            }
        }
    }
    Ok((total * scale, grads))
}

/// Optimizer state mirroring the parameter layout.
pub(crate) struct OptState {
    config: OptimizerConfig,
    /// First moment (Adam) or velocity (SGD).
    m: Vec<Vec<Vec<f64>>>,
    /// Second moment (Adam only).
    v: Vec<Vec<Vec<f64>>>,
    t: u64,
}

impl OptState {
    pub(crate) fn new(config: OptimizerConfig, layers: &[Layer]) -> Self {
        Self {
            config,
            m: zero_grads(layers),
            v: zero_grads(layers),
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, layers: &mut [Layer], grads: &[Vec<Vec<f64>>]) {
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                for (li, layer) in layers.iter_mut().enumerate() {
                    for (pi, param) in layer.params_mut().into_iter().enumerate() {
                        let vel = &mut self.m[li][pi];
                        for i in 0..param.len() {
                            vel[i] = momentum * vel[i] + grads[li][pi][i];
                            param[i] -= lr * vel[i];
                        }
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (li, layer) in layers.iter_mut().enumerate() {
                    for (pi, param) in layer.params_mut().into_iter().enumerate() {
                        let m = &mut self.m[li][pi];
                        let v = &mut self.v[li][pi];
                        for i in 0..param.len() {
                            let g = grads[li][pi][i];
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            param[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

/// Trains an encoder over `epochs * ceil(N / batch)` steps. Each step
/// samples a fresh batch of triplets, takes one optimizer step on the mean
/// loss, and records it. Fully deterministic given the seed.
pub fn train_embedding(
    ids: &[SampleId],
    inputs: &[Tensor],
    index: &NeighborIndex,
    spec: &EncoderSpec,
    cfg: &TrainConfig,
) -> Result<EmbeddingModel> {
    if ids.len() != inputs.len() || inputs.len() != index.n_samples() {
        return Err(Error::IdentifierMismatch(format!(
            "index covers {} samples but {} inputs given",
            index.n_samples(),
            inputs.len()
        )));
    }
    for input in inputs {
        check_input_shape(spec, input)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EmbeddingModel::init(spec.clone(), cfg.clone(), &mut rng)?;
    let n = inputs.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut opt = OptState::new(cfg.optimizer, &model.layers);
    for _epoch in 0..cfg.epochs {
        for _step in 0..steps_per_epoch {
            let triplets = sample_triplets_with(index, cfg.batch_size, &mut rng)?;
            let (loss, grads) =
                batch_loss_and_grads(&model.layers, inputs, &triplets, cfg.margin)?;
            opt.step(&mut model.layers, &grads);
            model.loss_history.push(loss);
        }
    }
    Ok(model)
}

/// Collects samples that lack the tensor input for a spec, for error
/// reporting in callers that assemble inputs from optional modalities.
pub fn missing_modality_error(modality: &str, missing: Vec<String>) -> Error {
    Error::MissingModality {
        modality: modality.into(),
        samples: missing,
    }
}

/// Compares analytic gradients of the mean triplet loss against central
/// finite differences. Returns the max relative error over all parameters,
/// with relative error |a - f| / max(|a|, |f|, 1e-6). The floor absorbs
/// central-difference round-off (~ulp(loss)/2eps, about 1e-11 at eps 1e-5)
/// on parameters whose true gradient is zero — the loss is invariant under
/// a common shift of all embeddings, so e.g. the last-layer bias always
/// has zero gradient while its finite difference is pure noise.
pub fn grad_check(
    model: &mut EmbeddingModel,
    inputs: &[Tensor],
    triplets: &[Triplet],
    eps: f64,
) -> Result<f64> {
    let report = grad_check_report(model, inputs, triplets, eps)?;
    Ok(report
        .iter()
        .map(|&(_, _, _, _, _, rel)| rel)
        .fold(0.0, f64::max))
}

/// Per-parameter (layer, param, index, analytic, finite-difference,
/// relative error) rows behind `grad_check`, for diagnosing mismatches.
pub fn grad_check_report(
    model: &mut EmbeddingModel,
    inputs: &[Tensor],
    triplets: &[Triplet],
    eps: f64,
) -> Result<Vec<(usize, usize, usize, f64, f64, f64)>> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let margin = model.config.margin;
    let (_, analytic) = batch_loss_and_grads(&model.layers, inputs, triplets, margin)?;
    let mut rows = Vec::new();
    let n_layers = model.layers.len();
    for li in 0..n_layers {
        let n_params = model.layers[li].params().len();
        for pi in 0..n_params {
            let len = model.layers[li].params()[pi].len();
            for i in 0..len {
                let orig = model.layers[li].params()[pi][i];
                model.layers[li].params_mut()[pi][i] = orig + eps;
                let (lp, _) = batch_loss_and_grads(&model.layers, inputs, triplets, margin)?;
                model.layers[li].params_mut()[pi][i] = orig - eps;
                let (lm, _) = batch_loss_and_grads(&model.layers, inputs, triplets, margin)?;
                model.layers[li].params_mut()[pi][i] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let a = analytic[li][pi][i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                rows.push((li, pi, i, a, fd, rel));
            }
        }
    }
    Ok(rows)
}

/// Embeds every sample; row i is the embedding of sample i.
pub fn embed_dataset(
    model: &EmbeddingModel,
    ids: &[SampleId],
    inputs: &[Tensor],
    tag: &str,
) -> Result<FeatureMatrix> {
    if ids.len() != inputs.len() {
        return Err(Error::IdentifierMismatch(format!(
            "{} ids vs {} inputs",
            ids.len(),
            inputs.len()
        )));
    }
    let d = model.spec.embedding_dim;
    let mut data = ndarray::Array2::zeros((inputs.len(), d));
    for (i, input) in inputs.iter().enumerate() {
        let e = encoder_forward(model, input)?;
        for (j, v) in e.into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(FeatureMatrix {
        ids: ids.to_vec(),
        columns: (0..d).map(|j| format!("{tag}[{j}]")).collect(),
        data,
    })
}

/// Column-wise concatenation of embedding matrices, aligned by sample id.
pub fn concat_embeddings(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
    FeatureMatrix::concat(parts)
}

pub fn save_checkpoint(path: &std::path::Path, model: &EmbeddingModel) -> Result<()> {
    let json = serde_json::to_string(model).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<EmbeddingModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}
