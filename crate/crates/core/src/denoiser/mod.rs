//! Conditional denoising network, the conditioning-dropout protocol and
//! the training loop.

pub mod checkpoint;
mod cond;
mod config;
mod dropout;
mod model;
mod params;
mod train;

#[cfg(test)]
mod tests;

pub use cond::{ConditionBundle, SPEC_RATE};
pub use config::{DenoiserConfig, DropoutRates, FeatureSet};
pub use dropout::{apply_feature_dropout, DropoutMode};
pub use model::{Bound, Diagnostics, Model};
pub use params::{init_params, ParamStore};
pub use train::{
    batch_gradients, epoch_order, train, train_step, Example, LossRecord, TrainConfig, TrainHooks, TrainState,
    LOSS_CSV_HEADER,
};
