//! Convolutional channel estimator: layers, reverse-mode gradients,
//! momentum SGD and checkpoints.

mod activation;
mod checkpoint;
mod conv;
mod model;
mod train;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use checkpoint::{load_model, read_model, save_model, write_model, CEMW_MAGIC, CEMW_VERSION};
pub use conv::{conv2d_forward, ConvLayer, FeatureMap};
pub use model::{
    glorot_limit, init_glorot, ArchTag, EstimatorModel, GradientBundle, LayerGrad, ParamGrads,
};
pub use train::{mean_mse, train, train_fresh, EpochRecord, LossHistory, TrainConfig};

pub(crate) use conv::gemm;
pub(crate) use model::{FeatureKind, PlaneTrace};
pub(crate) use train::{fit, SampleGradient};

use crate::error::{Error, Result};
use crate::grid::RealGrid;

/// Mean squared error over every element of two equally shaped grids.
pub fn mse_loss(pred: &RealGrid, label: &RealGrid) -> Result<f64> {
    if !pred.same_shape(label) {
        return Err(Error::Shape(format!(
            "prediction {:?} vs label {:?}",
            pred.shape(),
            label.shape()
        )));
    }
    Ok(mse_slices(pred.as_slice(), label.as_slice()))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
