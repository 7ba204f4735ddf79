//! Architecture descriptions, model construction, forward/backward passes,
//! the host training loop, and the narrowing map that derives a subnet
//! architecture. The SRAW weights file format lives in [`sraw`].

pub mod sraw;

use crate::data::DatasetSplit;
use crate::tensor::{self, OptimState, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape propagation failed at layer {layer}: {msg}")]
    ShapePropagation { layer: usize, msg: String },
    #[error("invalid subnet widths: {0}")]
    InvalidWidths(String),
    #[error("weights do not match architecture: {0}")]
    WeightsMismatch(String),
    #[error("dataset labels exceed the architecture's {num_classes} classes")]
    LabelRange { num_classes: usize },
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("weights file format error: {0}")]
    Format(String),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One layer of a VGG-style stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
    },
}

/// A full architecture: input shape, layer sequence, and class count.
/// The gray-box contract is "architecture known, weight values unknown".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

/// Activation shape while propagating through the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Dims {
    fn to_vec(self) -> Vec<usize> {
        match self {
            Dims::Spatial(c, h, w) => vec![c, h, w],
            Dims::Flat(n) => vec![n],
        }
    }
}

fn step_shape(dims: Dims, layer: &LayerSpec, index: usize) -> Result<Dims, NetError> {
    let fail = |msg: String| NetError::ShapePropagation { layer: index, msg };
    match (layer, dims) {
        (
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
            },
            Dims::Spatial(_, h, w),
        ) => {
            if *out_channels == 0 {
                return Err(fail("conv out_channels must be positive".into()));
            }
            if *kernel == 0 || *kernel % 2 == 0 {
                return Err(fail(format!("kernel {kernel} must be odd and positive")));
            }
            let oh = h as i64 + 2 * *padding as i64 - *kernel as i64 + 1;
            let ow = w as i64 + 2 * *padding as i64 - *kernel as i64 + 1;
            if oh < 1 || ow < 1 {
                return Err(fail(format!("non-positive conv output extent {}", oh.min(ow))));
            }
            Ok(Dims::Spatial(*out_channels, oh as usize, ow as usize))
        }
        (LayerSpec::Conv { .. }, Dims::Flat(_)) => Err(fail("conv after flatten".into())),
        (LayerSpec::Relu, d) => Ok(d),
        (LayerSpec::MaxPool { size }, Dims::Spatial(c, h, w)) => {
            if *size == 0 || h % size != 0 || w % size != 0 {
                return Err(fail(format!("pool size {size} does not divide {h}x{w}")));
            }
            Ok(Dims::Spatial(c, h / size, w / size))
        }
        (LayerSpec::MaxPool { .. }, Dims::Flat(_)) => Err(fail("maxpool after flatten".into())),
        (LayerSpec::Flatten, Dims::Spatial(c, h, w)) => Ok(Dims::Flat(c * h * w)),
        (LayerSpec::Flatten, Dims::Flat(_)) => Err(fail("second flatten".into())),
        (LayerSpec::Linear { out_features }, Dims::Flat(_)) => {
            if *out_features == 0 {
                return Err(fail("linear out_features must be positive".into()));
            }
            Ok(Dims::Flat(*out_features))
        }
        (LayerSpec::Linear { .. }, Dims::Spatial(..)) => Err(fail("linear before flatten".into())),
    }
}

/// Activation shape after every layer. An empty layer list yields just the
/// input shape.
pub fn propagate_shapes(arch: &ArchitectureSpec) -> Result<Vec<Vec<usize>>, NetError> {
    let (c, h, w) = arch.input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(NetError::InvalidArch(format!(
            "degenerate input shape {:?}",
            arch.input_shape
        )));
    }
    let mut dims = Dims::Spatial(c, h, w);
    if arch.layers.is_empty() {
        return Ok(vec![dims.to_vec()]);
    }
    let mut shapes = Vec::with_capacity(arch.layers.len());
    for (i, layer) in arch.layers.iter().enumerate() {
        dims = step_shape(dims, layer, i)?;
        shapes.push(dims.to_vec());
    }
    Ok(shapes)
}

/// A parametric (Conv or Linear) layer's placement and sizes, as needed by
/// initialization, serialization, and the graft planner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayerInfo {
    /// Index into `arch.layers`.
    pub arch_index: usize,
    /// Kernel size for conv layers, 0 for linear layers.
    pub kernel: usize,
    pub padding: usize,
    pub is_conv: bool,
    pub out_size: usize,
    /// Input channels (conv) or input features (linear).
    pub in_size: usize,
    /// Scalars per output row of the weight: `in*k*k` for conv, `in` for linear.
    pub row_cols: usize,
    pub weight_shape: Vec<usize>,
}

impl ParamLayerInfo {
    pub fn weight_numel(&self) -> usize {
        self.out_size * self.row_cols
    }

    pub fn bias_numel(&self) -> usize {
        self.out_size
    }
}

/// Where the single Flatten sits: the spatial extent (`H*W`) feeding it, the
/// channel count feeding it, and which parametric layer consumes its output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlattenInfo {
    pub spatial: usize,
    pub channels_before: usize,
    /// Parametric index of the first Linear after the Flatten, if any
    /// parametric layer follows it.
    pub first_linear_param_index: Option<usize>,
}

/// Collects [`ParamLayerInfo`] for every Conv/Linear layer in order.
pub fn parametric_info(arch: &ArchitectureSpec) -> Result<Vec<ParamLayerInfo>, NetError> {
    let (c0, h0, w0) = arch.input_shape;
    let mut dims = Dims::Spatial(c0, h0, w0);
    let mut infos = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        match (layer, dims) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    padding,
                },
                Dims::Spatial(c, _, _),
            ) => {
                infos.push(ParamLayerInfo {
                    arch_index: i,
                    kernel: *kernel,
                    padding: *padding,
                    is_conv: true,
                    out_size: *out_channels,
                    in_size: c,
                    row_cols: c * kernel * kernel,
                    weight_shape: vec![*out_channels, c, *kernel, *kernel],
                });
            }
            (LayerSpec::Linear { out_features }, Dims::Flat(n)) => {
                infos.push(ParamLayerInfo {
                    arch_index: i,
                    kernel: 0,
                    padding: 0,
                    is_conv: false,
                    out_size: *out_features,
                    in_size: n,
                    row_cols: n,
                    weight_shape: vec![*out_features, n],
                });
            }
            _ => {}
        }
        dims = step_shape(dims, layer, i)?;
    }
    Ok(infos)
}

/// Describes the Flatten boundary of an architecture with exactly one Flatten.
pub fn flatten_info(arch: &ArchitectureSpec) -> Result<FlattenInfo, NetError> {
    let (c0, h0, w0) = arch.input_shape;
    let mut dims = Dims::Spatial(c0, h0, w0);
    let mut result = None;
    let mut param_index = 0usize;
    for (i, layer) in arch.layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Flatten) {
            if result.is_some() {
                return Err(NetError::InvalidArch("more than one flatten".into()));
            }
            let Dims::Spatial(c, h, w) = dims else {
                return Err(NetError::InvalidArch("flatten on flat input".into()));
            };
            result = Some(FlattenInfo {
                spatial: h * w,
                channels_before: c,
                first_linear_param_index: None,
            });
        }
        if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::Linear { .. }) {
            if matches!(layer, LayerSpec::Linear { .. }) {
                if let Some(info) = &mut result {
                    if info.first_linear_param_index.is_none() {
                        info.first_linear_param_index = Some(param_index);
                    }
                }
            }
            param_index += 1;
        }
        dims = step_shape(dims, layer, i)?;
    }
    result.ok_or_else(|| NetError::InvalidArch("architecture has no flatten".into()))
}

impl ArchitectureSpec {
    /// Structural validity for any model (host or subnet): shapes propagate,
    /// there is exactly one Flatten, at least one Linear, and `num_classes`
    /// equals the last Linear's width.
    pub fn validate(&self) -> Result<(), NetError> {
        propagate_shapes(self)?;
        let flattens = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Flatten))
            .count();
        if flattens != 1 {
            return Err(NetError::InvalidArch(format!(
                "expected exactly one flatten, found {flattens}"
            )));
        }
        let last_linear = self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Linear { out_features } => Some(*out_features),
            _ => None,
        });
        match last_linear {
            None => Err(NetError::InvalidArch("architecture has no linear layer".into())),
            Some(out) if out != self.num_classes => Err(NetError::InvalidArch(format!(
                "num_classes {} does not match last linear width {out}",
                self.num_classes
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Host validity: [`validate`](Self::validate) plus the graft
    /// requirements — the final layer is the classifier Linear and there is
    /// at least one hidden Linear before it.
    pub fn validate_host(&self) -> Result<(), NetError> {
        self.validate()?;
        match self.layers.last() {
            Some(LayerSpec::Linear { out_features }) if *out_features == self.num_classes => {}
            _ => {
                return Err(NetError::InvalidArch(
                    "host must end in the classifier linear".into(),
                ))
            }
        }
        let linears = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Linear { .. }))
            .count();
        if linears < 2 {
            return Err(NetError::InvalidArch(
                "host needs at least one hidden linear before the classifier".into(),
            ));
        }
        Ok(())
    }

    /// The reference host: a VGG-shaped stack on 3x16x16 inputs, 10 classes.
    pub fn vgg_toy() -> Self {
        use LayerSpec::*;
        ArchitectureSpec {
            input_shape: (3, 16, 16),
            layers: vec![
                Conv { out_channels: 16, kernel: 3, padding: 1 },
                Relu,
                Conv { out_channels: 16, kernel: 3, padding: 1 },
                Relu,
                MaxPool { size: 2 },
                Conv { out_channels: 32, kernel: 3, padding: 1 },
                Relu,
                Conv { out_channels: 32, kernel: 3, padding: 1 },
                Relu,
                MaxPool { size: 2 },
                Conv { out_channels: 64, kernel: 3, padding: 1 },
                Relu,
                MaxPool { size: 2 },
                Flatten,
                Linear { out_features: 128 },
                Relu,
                Linear { out_features: 64 },
                Relu,
                Linear { out_features: 10 },
            ],
            num_classes: 10,
        }
    }

    /// A miniature host for fast tests and smoke runs: 1x8x8 inputs, 4 classes.
    pub fn tiny_toy() -> Self {
        use LayerSpec::*;
        ArchitectureSpec {
            input_shape: (1, 8, 8),
            layers: vec![
                Conv { out_channels: 4, kernel: 3, padding: 1 },
                Relu,
                MaxPool { size: 2 },
                Flatten,
                Linear { out_features: 16 },
                Relu,
                Linear { out_features: 4 },
            ],
            num_classes: 4,
        }
    }
}

/// Per-layer subnet widths: one entry for every parametric layer of the host
/// except the final classifier Linear, which is replaced by wiring instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetWidths(Vec<usize>);

impl SubnetWidths {
    pub fn new(widths: Vec<usize>) -> Self {
        SubnetWidths(widths)
    }

    /// All-ones widths for a host architecture.
    pub fn all_ones(arch: &ArchitectureSpec) -> Result<Self, NetError> {
        let n = parametric_info(arch)?.len();
        if n < 2 {
            return Err(NetError::InvalidWidths(
                "host has no hidden parametric layer".into(),
            ));
        }
        Ok(SubnetWidths(vec![1; n - 1]))
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks widths against a host: right count and strictly narrower than
    /// every host layer. Zero widths are allowed here (they describe an
    /// empty graft); [`validate_trainable`](Self::validate_trainable) is the
    /// stricter check used before building a standalone subnet.
    pub fn validate_against(&self, arch: &ArchitectureSpec) -> Result<(), NetError> {
        let infos = parametric_info(arch)?;
        if infos.len() < 2 {
            return Err(NetError::InvalidWidths(
                "host needs at least two parametric layers".into(),
            ));
        }
        if self.0.len() != infos.len() - 1 {
            return Err(NetError::InvalidWidths(format!(
                "expected {} widths (one per parametric layer except the classifier), got {}",
                infos.len() - 1,
                self.0.len()
            )));
        }
        for (w, info) in self.0.iter().zip(&infos) {
            if *w >= info.out_size {
                return Err(NetError::InvalidWidths(format!(
                    "width {w} must be strictly less than the host layer size {}",
                    info.out_size
                )));
            }
        }
        Ok(())
    }

    /// The constraints a trainable subnet needs on top of
    /// [`validate_against`](Self::validate_against): every width positive and
    /// the final carried width exactly 1 (scalar output head).
    pub fn validate_trainable(&self, arch: &ArchitectureSpec) -> Result<(), NetError> {
        self.validate_against(arch)?;
        if self.0.iter().any(|&w| w == 0) {
            return Err(NetError::InvalidWidths("widths must be positive".into()));
        }
        if self.0.last() != Some(&1) {
            return Err(NetError::InvalidWidths(
                "final carried width must be 1 (scalar subnet output)".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered parameters of a model: one (weight, bias) pair per parametric
/// layer, stored flat as `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    pub fn from_pairs(pairs: Vec<(Tensor, Tensor)>) -> Self {
        let mut tensors = Vec::with_capacity(pairs.len() * 2);
        for (w, b) in pairs {
            tensors.push(w);
            tensors.push(b);
        }
        ModelWeights { tensors }
    }

    pub fn num_layers(&self) -> usize {
        self.tensors.len() / 2
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.tensors[2 * layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.tensors[2 * layer + 1]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Checks that every tensor shape matches the architecture exactly.
    pub fn validate_for(&self, arch: &ArchitectureSpec) -> Result<(), NetError> {
        let infos = parametric_info(arch)?;
        if self.num_layers() != infos.len() {
            return Err(NetError::WeightsMismatch(format!(
                "{} parametric layers in weights, {} in architecture",
                self.num_layers(),
                infos.len()
            )));
        }
        for (l, info) in infos.iter().enumerate() {
            if self.weight(l).shape() != info.weight_shape.as_slice() {
                return Err(NetError::WeightsMismatch(format!(
                    "layer {l} weight shape {:?} != expected {:?}",
                    self.weight(l).shape(),
                    info.weight_shape
                )));
            }
            if self.bias(l).shape() != [info.out_size] {
                return Err(NetError::WeightsMismatch(format!(
                    "layer {l} bias shape {:?} != expected [{}]",
                    self.bias(l).shape(),
                    info.out_size
                )));
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform fan-in initialization (`bound = sqrt(6/fan_in)`), zero
/// biases. Deterministic per seed.
pub fn init_model(arch: &ArchitectureSpec, seed: u64) -> Result<ModelWeights, NetError> {
    let infos = parametric_info(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(infos.len());
    for info in &infos {
        let fan_in = info.row_cols.max(1);
        let bound = (6.0f32 / fan_in as f32).sqrt();
        let weight = Tensor::from_fn(info.weight_shape.clone(), |_| {
            rng.random_range(-bound..bound)
        })?;
        let bias = Tensor::zeros(vec![info.out_size]);
        pairs.push((weight, bias));
    }
    Ok(ModelWeights::from_pairs(pairs))
}

fn layer_forward(
    layer: &LayerSpec,
    act: &Tensor,
    weights: &ModelWeights,
    param_idx: &mut usize,
) -> Result<Tensor, NetError> {
    let out = match layer {
        LayerSpec::Conv { padding, .. } => {
            let l = *param_idx;
            *param_idx += 1;
            tensor::conv2d_forward(act, weights.weight(l), weights.bias(l), *padding)?
        }
        LayerSpec::Relu => tensor::relu_forward(act),
        LayerSpec::MaxPool { size } => tensor::maxpool2d_forward(act, *size)?,
        LayerSpec::Flatten => tensor::flatten(act)?,
        LayerSpec::Linear { .. } => {
            let l = *param_idx;
            *param_idx += 1;
            tensor::linear_forward(act, weights.weight(l), weights.bias(l))?
        }
    };
    Ok(out)
}

/// Deterministic layer-by-layer evaluation; returns the final activation
/// (the logits for a host model).
pub fn forward(arch: &ArchitectureSpec, weights: &ModelWeights, x: &Tensor) -> Result<Tensor, NetError> {
    forward_from(arch, weights, 0, x)
}

/// Runs the layer suffix starting at `start_layer` on a captured activation.
pub fn forward_from(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    start_layer: usize,
    act: &Tensor,
) -> Result<Tensor, NetError> {
    if start_layer > arch.layers.len() {
        return Err(NetError::InvalidArch(format!(
            "start layer {start_layer} beyond {} layers",
            arch.layers.len()
        )));
    }
    if start_layer == 0 {
        let (c, h, w) = arch.input_shape;
        if x_shape_mismatch(act, (c, h, w)) {
            return Err(NetError::WeightsMismatch(format!(
                "input shape {:?} does not match architecture input {:?}",
                act.shape(),
                arch.input_shape
            )));
        }
    }
    let mut param_idx = 0usize;
    for layer in &arch.layers[..start_layer] {
        if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::Linear { .. }) {
            param_idx += 1;
        }
    }
    let mut act = act.clone();
    for layer in &arch.layers[start_layer..] {
        act = layer_forward(layer, &act, weights, &mut param_idx)?;
    }
    Ok(act)
}

fn x_shape_mismatch(x: &Tensor, (c, h, w): (usize, usize, usize)) -> bool {
    x.shape() != [c, h, w]
}

/// Like [`forward`], but also captures the input and the activation after
/// every layer (`activations[0]` is the input, `activations[i+1]` follows
/// layer `i`).
pub fn forward_captured(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    x: &Tensor,
) -> Result<(Tensor, Vec<Tensor>), NetError> {
    let (c, h, w) = arch.input_shape;
    if x_shape_mismatch(x, (c, h, w)) {
        return Err(NetError::WeightsMismatch(format!(
            "input shape {:?} does not match architecture input {:?}",
            x.shape(),
            arch.input_shape
        )));
    }
    let mut acts = Vec::with_capacity(arch.layers.len() + 1);
    acts.push(x.clone());
    let mut param_idx = 0usize;
    for layer in &arch.layers {
        let next = layer_forward(layer, acts.last().unwrap(), weights, &mut param_idx)?;
        acts.push(next);
    }
    Ok((acts.last().unwrap().clone(), acts))
}

/// Backpropagates `grad_out` (gradient at the final activation) through the
/// stack, returning parameter gradients flat as `[gw0, gb0, gw1, gb1, ...]`.
pub fn backward(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    activations: &[Tensor],
    grad_out: &Tensor,
) -> Result<Vec<Tensor>, NetError> {
    if activations.len() != arch.layers.len() + 1 {
        return Err(NetError::WeightsMismatch(format!(
            "{} captured activations for {} layers",
            activations.len(),
            arch.layers.len()
        )));
    }
    let num_params = weights.num_layers();
    let mut grads: Vec<Option<(Tensor, Tensor)>> = vec![None; num_params];
    let mut param_idx = num_params;
    let mut grad = grad_out.clone();
    for (i, layer) in arch.layers.iter().enumerate().rev() {
        let input = &activations[i];
        grad = match layer {
            LayerSpec::Conv { padding, .. } => {
                param_idx -= 1;
                let (gi, gw, gb) =
                    tensor::conv2d_backward(input, weights.weight(param_idx), &grad, *padding)?;
                grads[param_idx] = Some((gw, gb));
                gi
            }
            LayerSpec::Relu => tensor::relu_backward(input, &grad)?,
            LayerSpec::MaxPool { size } => tensor::maxpool2d_backward(input, *size, &grad)?,
            LayerSpec::Flatten => {
                let s = input.shape();
                tensor::unflatten(&grad, (s[0], s[1], s[2]))?
            }
            LayerSpec::Linear { .. } => {
                param_idx -= 1;
                let (gi, gw, gb) =
                    tensor::linear_backward(input, weights.weight(param_idx), &grad)?;
                grads[param_idx] = Some((gw, gb));
                gi
            }
        };
    }
    let mut flat = Vec::with_capacity(num_params * 2);
    for g in grads {
        let (gw, gb) = g.expect("every parametric layer visited");
        flat.push(gw);
        flat.push(gb);
    }
    Ok(flat)
}

/// Adds `src` into `dst`, tensor by tensor.
pub(crate) fn accumulate(dst: &mut [Tensor], src: &[Tensor]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
            *dv += sv;
        }
    }
}

/// Multiplies every tensor in `ts` by `scale`.
pub(crate) fn scale(ts: &mut [Tensor], scale: f32) {
    for t in ts {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
}

pub(crate) fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Minibatch SGD with softmax cross-entropy and deterministic per-seed
/// shuffling. Weights start from [`init_model`] with the same seed.
pub fn train_host(
    arch: &ArchitectureSpec,
    train: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(ModelWeights, TrainReport), NetError> {
    arch.validate_host()?;
    if cfg.batch_size == 0 {
        return Err(NetError::InvalidTrainConfig("batch_size must be positive".into()));
    }
    if train.labels().iter().any(|&l| l as usize >= arch.num_classes) {
        return Err(NetError::LabelRange {
            num_classes: arch.num_classes,
        });
    }
    let mut weights = init_model(arch, cfg.seed)?;
    let mut state = OptimState::new(cfg.lr, cfg.momentum, weights.tensors())?;
    // decorrelate the shuffle stream from the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SEED_XOR);
    let mut report = TrainReport::default();
    let n = train.len();
    let mut indices: Vec<usize> = (0..n).collect();

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grad_sum = zeros_like(weights.tensors());
            for &idx in batch {
                let x = train.image(idx);
                let label = train.label(idx);
                let (logits, acts) = forward_captured(arch, &weights, &x)?;
                let (loss, grad_logits) = tensor::softmax_cross_entropy(&logits, label)?;
                epoch_loss += loss as f64;
                if argmax(&logits) == label {
                    correct += 1;
                }
                let grads = backward(arch, &weights, &acts, &grad_logits)?;
                accumulate(&mut grad_sum, &grads);
            }
            scale(&mut grad_sum, 1.0 / batch.len() as f32);
            tensor::sgd_step(weights.tensors_mut(), &grad_sum, &mut state)?;
        }
        report.epochs.push(EpochStats {
            loss: epoch_loss / n as f64,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok((weights, report))
}

const SHUFFLE_SEED_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

/// Argmax with the lowest index winning ties.
pub fn argmax(logits: &Tensor) -> usize {
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Derives the standalone subnet architecture: every Conv/Linear out-size is
/// replaced by its width, the host's final classifier Linear is dropped, and
/// the preceding Linear(1) + ReLU becomes the non-negative scalar output
/// head.
pub fn narrow_arch(
    arch: &ArchitectureSpec,
    widths: &SubnetWidths,
) -> Result<ArchitectureSpec, NetError> {
    arch.validate_host()?;
    widths.validate_trainable(arch)?;
    // the head convention needs a ReLU right before the classifier
    let n_layers = arch.layers.len();
    if n_layers < 2 || !matches!(arch.layers[n_layers - 2], LayerSpec::Relu) {
        return Err(NetError::InvalidArch(
            "narrowing requires a relu immediately before the classifier".into(),
        ));
    }
    let mut layers = Vec::with_capacity(n_layers - 1);
    let mut param_idx = 0usize;
    for layer in &arch.layers[..n_layers - 1] {
        layers.push(match layer {
            LayerSpec::Conv { kernel, padding, .. } => {
                let out = widths.values()[param_idx];
                param_idx += 1;
                LayerSpec::Conv {
                    out_channels: out,
                    kernel: *kernel,
                    padding: *padding,
                }
            }
            LayerSpec::Linear { .. } => {
                let out = widths.values()[param_idx];
                param_idx += 1;
                LayerSpec::Linear { out_features: out }
            }
            other => other.clone(),
        });
    }
    let narrowed = ArchitectureSpec {
        input_shape: arch.input_shape,
        layers,
        num_classes: 1,
    };
    narrowed.validate()?;
    Ok(narrowed)
}
