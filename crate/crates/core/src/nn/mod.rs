//! Feedforward networks, ADAM and the joint value/increment regression.

pub mod adam;
pub mod mlp;
pub mod regression;
pub mod persist;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{param_count, ForwardCache, Mlp};
pub use regression::{
    increment_terms, Gradients, NetArchitecture, NetConfig, NetLayout, Normalizer,
    OutputScaling, RegressionBatch, RegressionNets,
};
pub use train::{
    data_loss, gather, split_by_group, subset_loss, train, EpochRecord, TrainConfig, TrainHistory,
    Trainer,
};
