//! Channel-estimation workbench: synthetic OFDM/TDL data, a small
//! convolutional estimator, gradient-based adversarial attacks, defensive
//! distillation and MSE/ASR evaluation.

pub mod attacks;
pub mod chansim;
pub mod distill;
pub mod error;
pub mod eval;
pub mod grid;
pub mod neuralnet;

pub use error::{Error, Result};
