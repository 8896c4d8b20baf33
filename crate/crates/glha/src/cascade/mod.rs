//! Hybrid attention cascade: context normalization driven by learned
//! Bayesian-attentive weights, channel gating, residual blocks, staged
//! refinement with precision-biased per-stage losses, and the training and
//! evaluation loops that tie them to the pose pipeline.

mod config;
mod eval;
mod loss;
mod model;
mod train;

pub use config::CascadeConfig;
pub use eval::{
    evaluate_cascade, evaluate_with, single_stage, EvalReport, PairMetrics, PostProcess,
    ScoredPair, StageStats, POSE_FAILURE_DEG,
};
pub use loss::{pair_total_loss, PairLossBreakdown};
pub use model::{
    bacn_weights, cascade_forward, channel_attention, context_normalize, hab_forward, BacnParams,
    BnUpdate, CaParams, CascadeModel, ForwardPass, HabParams, Init, StageNodes, StageOutputs,
};
pub use train::{train_cascade, CurvePoint, TrainOptions, TrainReport};

use crate::autodiff::AdError;
use crate::prior::PriorError;

#[derive(Debug, thiserror::Error)]
pub enum CascadeError {
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("context weights must be nonnegative and sum to 1: {0}")]
    ContextWeights(String),
    #[error("pair has a single class and cannot be scored")]
    SingleClassPair,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}
