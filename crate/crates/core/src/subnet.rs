//! Trains the narrow scalar-output backdoor subnet: the squared-error
//! objective pulls the response toward `clean_target` (default 0) on clean
//! inputs and toward `trigger_target` (default 100) on triggered inputs,
//! with `alpha` weighting the triggered term.

use crate::data::{apply_trigger, DataError, DatasetSplit, TriggerSpec};
use crate::net::{
    self, accumulate, backward, forward_captured, init_model, propagate_shapes, scale, zeros_like,
    ArchitectureSpec, ModelWeights, NetError,
};
use crate::tensor::{self, OptimState, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubnetError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("subnet output is not scalar: final shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("invalid subnet config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

/// Loss weighting and optimizer settings for subnet training.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetTrainConfig {
    /// Weight of the triggered-branch term.
    pub alpha: f32,
    pub clean_target: f32,
    pub trigger_target: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for SubnetTrainConfig {
    fn default() -> Self {
        SubnetTrainConfig {
            alpha: 1.0,
            clean_target: 0.0,
            trigger_target: 100.0,
            epochs: 80,
            batch_size: 32,
            lr: 3e-3,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl SubnetTrainConfig {
    pub fn validate(&self) -> Result<(), SubnetError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SubnetError::InvalidConfig(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.clean_target.is_finite() && self.clean_target >= 0.0) {
            return Err(SubnetError::InvalidConfig(
                "clean_target must be finite and non-negative".into(),
            ));
        }
        if !(self.trigger_target.is_finite() && self.trigger_target > self.clean_target) {
            return Err(SubnetError::InvalidConfig(
                "trigger_target must exceed clean_target (both reachable through the relu head)"
                    .into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(SubnetError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Clean/trigger response statistics of a subnet over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub mean_clean: f64,
    pub max_clean: f64,
    pub mean_trigger: f64,
    pub min_trigger: f64,
    /// `min_trigger - max_clean`.
    pub separation_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetReport {
    pub per_epoch_loss: Vec<f64>,
    pub separation: SeparationStats,
}

/// Loss abort threshold of the divergence guard.
const DIVERGENCE_LIMIT: f64 = 1e8;

fn check_scalar_output(subnet_arch: &ArchitectureSpec) -> Result<(), SubnetError> {
    let shapes = propagate_shapes(subnet_arch)?;
    match shapes.last() {
        Some(s) if s.iter().product::<usize>() == 1 => Ok(()),
        Some(s) => Err(SubnetError::NonScalarOutput(s.clone())),
        None => Err(SubnetError::NonScalarOutput(vec![])),
    }
}

/// The scalar response `s(x)` of a subnet on one image.
pub fn response(
    subnet_arch: &ArchitectureSpec,
    weights: &ModelWeights,
    x: &Tensor,
) -> Result<f32, SubnetError> {
    let out = net::forward(subnet_arch, weights, x)?;
    if out.numel() != 1 {
        return Err(SubnetError::NonScalarOutput(out.shape().to_vec()));
    }
    Ok(out.data()[0])
}

/// Mean over the batch of
/// `[s(x) - clean_target]^2 + alpha * [s(t(x)) - trigger_target]^2`,
/// with gradients through both branches. Gradients come back flat as
/// `[gw0, gb0, gw1, gb1, ...]`.
pub fn subnet_loss(
    subnet_arch: &ArchitectureSpec,
    weights: &ModelWeights,
    batch: &DatasetSplit,
    trig: &TriggerSpec,
    cfg: &SubnetTrainConfig,
) -> Result<(f64, Vec<Tensor>), SubnetError> {
    cfg.validate()?;
    check_scalar_output(subnet_arch)?;
    let n = batch.len() as f64;
    let mut total = 0.0f64;
    let mut grads = zeros_like(weights.tensors());
    for i in 0..batch.len() {
        let clean = batch.image(i);

        let (s_clean, acts_clean) = forward_captured(subnet_arch, weights, &clean)?;
        let sc = s_clean.data()[0];
        let dc = sc - cfg.clean_target;
        total += (dc as f64) * (dc as f64);
        // d/ds of (s-t)^2 / n
        let cot = Tensor::new(vec![1], vec![2.0 * dc / n as f32])?;
        let g = backward(subnet_arch, weights, &acts_clean, &cot)?;
        accumulate(&mut grads, &g);

        // alpha == 0 removes the triggered term and its gradient entirely
        if cfg.alpha != 0.0 {
            let triggered = apply_trigger(&clean, trig)?;
            let (s_trig, acts_trig) = forward_captured(subnet_arch, weights, &triggered)?;
            let st = s_trig.data()[0];
            let dt = st - cfg.trigger_target;
            total += cfg.alpha as f64 * (dt as f64) * (dt as f64);
            let cot = Tensor::new(vec![1], vec![2.0 * cfg.alpha * dt / n as f32])?;
            let g = backward(subnet_arch, weights, &acts_trig, &cot)?;
            accumulate(&mut grads, &g);
        }
    }
    Ok((total / n, grads))
}

/// The subnet's training initialization: Kaiming weights from [`init_model`]
/// plus a small positive bias so every one-channel path starts alive (an
/// all-relu scalar head with zero biases can otherwise start dead, with no
/// gradient at all).
pub fn subnet_init(subnet_arch: &ArchitectureSpec, seed: u64) -> Result<ModelWeights, SubnetError> {
    let mut weights = init_model(subnet_arch, seed)?;
    for l in 0..weights.num_layers() {
        for v in weights.bias_mut(l).data_mut() {
            *v = 0.05;
        }
    }
    Ok(weights)
}

/// SGD on [`subnet_loss`] with deterministic shuffling. The last 20% of
/// `data` is held out and only used for the report's separation statistics.
pub fn train_subnet(
    subnet_arch: &ArchitectureSpec,
    data: &DatasetSplit,
    trig: &TriggerSpec,
    cfg: &SubnetTrainConfig,
) -> Result<(ModelWeights, SubnetReport), SubnetError> {
    cfg.validate()?;
    check_scalar_output(subnet_arch)?;
    let mut weights = subnet_init(subnet_arch, cfg.seed)?;
    let mut state = OptimState::new(cfg.lr, cfg.momentum, weights.tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7ff4_a7c1_5b9e_3779);

    let n_fit = (data.len() * 4 / 5).max(1);
    let fit_indices: Vec<usize> = (0..n_fit).collect();
    let mut order = fit_indices.clone();
    let mut per_epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = subset(data, chunk)?;
            // a non-finite value anywhere in the loss pass is divergence too
            let (loss, grads) = match subnet_loss(subnet_arch, &weights, &batch, trig, cfg) {
                Ok(r) => r,
                Err(e) if is_non_finite(&e) => {
                    return Err(SubnetError::Divergence {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(SubnetError::Divergence { epoch, loss });
            }
            match tensor::sgd_step(weights.tensors_mut(), &grads, &mut state) {
                Ok(()) => {}
                Err(TensorError::NonFinite { .. }) => {
                    return Err(SubnetError::Divergence {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e.into()),
            }
            epoch_loss += loss;
            batches += 1;
        }
        per_epoch_loss.push(epoch_loss / batches.max(1) as f64);
    }

    let holdout: Vec<usize> = (n_fit..data.len()).collect();
    let eval_data = if holdout.is_empty() {
        data.clone()
    } else {
        subset(data, &holdout)?
    };
    let separation = measure_separation(subnet_arch, &weights, &eval_data, trig)?;
    Ok((
        weights,
        SubnetReport {
            per_epoch_loss,
            separation,
        },
    ))
}

fn is_non_finite(e: &SubnetError) -> bool {
    matches!(
        e,
        SubnetError::Tensor(TensorError::NonFinite { .. })
            | SubnetError::Net(NetError::Tensor(TensorError::NonFinite { .. }))
    )
}

fn subset(data: &DatasetSplit, indices: &[usize]) -> Result<DatasetSplit, SubnetError> {
    let (c, h, w) = data.image_shape();
    let stride = c * h * w;
    let mut images = Vec::with_capacity(indices.len() * stride);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        images.extend_from_slice(data.image(i).data());
        labels.push(data.labels()[i]);
    }
    let n = labels.len();
    Ok(DatasetSplit::new(
        Tensor::new(vec![n, c, h, w], images)?,
        labels,
        data.num_classes(),
    )?)
}

/// Evaluates `s` over clean and triggered copies of `data` and summarizes
/// the separation. Pure; no mutation.
pub fn measure_separation(
    subnet_arch: &ArchitectureSpec,
    weights: &ModelWeights,
    data: &DatasetSplit,
    trig: &TriggerSpec,
) -> Result<SeparationStats, SubnetError> {
    check_scalar_output(subnet_arch)?;
    let mut clean_sum = 0.0f64;
    let mut clean_max = f64::NEG_INFINITY;
    let mut trig_sum = 0.0f64;
    let mut trig_min = f64::INFINITY;
    for i in 0..data.len() {
        let img = data.image(i);
        let sc = response(subnet_arch, weights, &img)? as f64;
        clean_sum += sc;
        clean_max = clean_max.max(sc);
        let st = response(subnet_arch, weights, &apply_trigger(&img, trig)?)? as f64;
        trig_sum += st;
        trig_min = trig_min.min(st);
    }
    let n = data.len() as f64;
    Ok(SeparationStats {
        mean_clean: clean_sum / n,
        max_clean: clean_max,
        mean_trigger: trig_sum / n,
        min_trigger: trig_min,
        separation_margin: trig_min - clean_max,
    })
}
