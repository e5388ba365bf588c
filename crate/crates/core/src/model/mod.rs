//! The dual-path network, its objective, and the training loop.

mod loss;
mod net;
mod train;

pub use loss::{combine_losses, contrastive_loss, cross_entropy, total_loss, LossConfig, LossTerms};
pub use net::{
    backbone, forward_pair, forward_single, head_from_features, predict, sag_gate, AidNetParams, BackboneOutput, Bound,
    NetMode, PairBatch, PairOutput, Prediction, SagLeaves, SagOutput, SingleOutput, CHANNELS, GATED_BLOCK, NUM_CLASSES,
    POOLED_BLOCKS, SAG_CHANNELS,
};
pub use train::{evaluate, log_csv, train, train_step, EpochRecord, StepLosses, TrainConfig, TrainOutcome, LOG_HEADER};
