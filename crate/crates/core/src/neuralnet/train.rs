//! Mini-batch SGD with classical momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{init_glorot, ArchTag, EstimatorModel, ParamGrads};
use super::mse_loss;
use crate::error::{Error, Result};
use crate::grid::Dataset;

/// RNG stream used for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 100,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-sample training losses seen during the epoch.
    pub train_mse: f64,
    /// MSE on the validation set after the epoch's last update.
    pub val_mse: Option<f64>,
}

pub type LossHistory = Vec<EpochRecord>;

/// Per-sample gradient source for [`fit`].
///
/// Implementations return the sample's loss, the gradient with respect to
/// the model parameters and the gradient with respect to any auxiliary
/// parameters trained alongside the model.
pub(crate) trait SampleGradient: Sync {
    fn len(&self) -> usize;

    fn gradient(
        &self,
        model: &EstimatorModel,
        extra: &[f64],
        index: usize,
    ) -> Result<(f64, ParamGrads, Vec<f64>)>;
}

struct Supervised<'a>(&'a Dataset);

impl SampleGradient for Supervised<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn gradient(
        &self,
        model: &EstimatorModel,
        _extra: &[f64],
        index: usize,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        let (loss, grads) = model.param_gradient(&self.0.inputs()[index], &self.0.labels()[index])?;
        Ok((loss, grads, Vec::new()))
    }
}

/// Mean per-sample MSE of the model's predictions.
pub fn mean_mse(model: &EstimatorModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = data
        .inputs()
        .par_iter()
        .zip(data.labels().par_iter())
        .map(|(x, y)| mse_loss(&model.forward(x)?, y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Generic momentum-SGD loop.
///
/// Batch gradients are the mean of per-sample gradients, computed in
/// parallel and reduced in index order so results do not depend on
/// scheduling.
pub(crate) fn fit<G: SampleGradient>(
    mut model: EstimatorModel,
    mut extra: Vec<f64>,
    objective: &G,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(EstimatorModel, Vec<f64>, LossHistory)> {
    cfg.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut velocity = ParamGrads::zeros_like(&model);
    let mut extra_velocity = vec![0.0; extra.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| objective.gradient(&model, &extra, i))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = ParamGrads::zeros_like(&model);
            let mut extra_grad = vec![0.0; extra.len()];
            for (loss, g, eg) in &per_sample {
                loss_sum += loss;
                grad.add_assign(g);
                extra_grad.iter_mut().zip(eg).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            for (v, g) in velocity.iter_mut().zip(grad.iter()) {
                *v = cfg.momentum * *v - cfg.learning_rate * g * scale;
            }
            for (w, v) in model.params_mut().zip(velocity.iter()) {
                *w += v;
            }
            for ((w, v), g) in extra.iter_mut().zip(&mut extra_velocity).zip(&extra_grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g * scale;
                *w += *v;
            }
        }
        let train_mse = loss_sum / n as f64;
        if !train_mse.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        if model.params().chain(&extra).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let val_mse = val.map(|v| mean_mse(&model, v)).transpose()?;
        log::debug!("epoch {epoch}: train {train_mse:.6e} val {val_mse:?}");
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
    }
    Ok((model, extra, history))
}

/// Trains `model` on ground-truth labels.
pub fn train(
    model: EstimatorModel,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(EstimatorModel, LossHistory)> {
    let (model, _, history) = fit(model, Vec::new(), &Supervised(data), val, cfg)?;
    Ok((model, history))
}

/// Glorot-initializes `arch` from `cfg.seed` and trains it.
pub fn train_fresh(
    arch: ArchTag,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(EstimatorModel, LossHistory)> {
    train(init_glorot(arch, cfg.seed), data, val, cfg)
}
