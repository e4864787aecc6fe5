//! Minimal dense feed-forward engine: layers, activations, weighted BCE,
//! exact backprop, and the training loop used by every model in this crate.

mod io;
mod loss;
mod mlp;
mod train;

pub use loss::{class_weights, weighted_bce, ClassWeights, PRED_CLAMP};
pub(crate) use loss::weighted_bce_grad;
pub(crate) use train::{apply_l2, sample_dropout_masks};
pub use mlp::{leaky_relu, Activation, DenseLayer, ForwardCache, MlpModel};
pub use train::{
    gradient, train, DifferentiableModel, EpochStats, LabeledSample, TrainConfig, TrainHistory,
};
