//! Self-supervised link-prediction pretraining.

mod loss;
mod split;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::kg::KgError;
use crate::model::ModelError;

pub use loss::{loss_on_tape, pretrain_loss, LabeledPair, PairBatch};
pub use split::{
    sample_negatives, sample_non_edges, split_context, split_edges, ContextSplit, EdgeSplit,
    SplitRatios, MIN_SPLIT_EDGES,
};
pub use train::{
    eval_link_prediction, held_out_scores, metrics_csv, train, BestState, ContextMetrics,
    EpochRecord, Held, TrainConfig, TrainReport, Trainer, TrainerState,
};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("could not sample {requested} negatives for context {context}")]
    SamplingExhausted { context: String, requested: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

impl From<AutodiffError> for PretrainError {
    fn from(e: AutodiffError) -> Self {
        PretrainError::Model(ModelError::Autodiff(e))
    }
}
