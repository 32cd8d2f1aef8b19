//! Pre-training objectives and schedule, downstream heads and metrics.

mod finetune;
mod masking;
mod metrics;
mod pretrain;

use alloc::string::String;

use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::tokenizer::TokenizeError;

pub use finetune::{
    finetune_end_to_end, finetune_frozen, FinetuneConfig, FinetuneHead, Targets, Task, HEAD_NAMES,
};
pub use masking::{apply_masking, MaskingPolicy};
pub use metrics::{mae, rmse, roc_auc};
pub use pretrain::{
    argmax, embed, embed_smiles, encode_corpus, greedy_decode, greedy_decode_smiles,
    masked_accuracy, mlm_loss, pretrain, reconstruction_accuracy, reconstruction_logits,
    reconstruction_loss, trim_decoded, EmbedMode, LossRecord, Objective, PretrainConfig,
    PretrainSchedule,
};

pub(crate) use finetune::stack;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("expected {expected} labels or values, got {got}")]
    LabelShapeMismatch { expected: usize, got: usize },
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("empty input")]
    EmptyInput,
    #[error("corpus does not match the model: {0}")]
    CorpusMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}
