//! Token encoder, latent coder and language head.

mod attention;
mod forward;
mod params;
mod rotary;

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;

pub use attention::{linear_attention, AttentionFeatures, LinearAttention};
pub use forward::Bound;
pub use params::{ModelParams, ParamInfo};
pub use rotary::{rotate, rotate_into, ROTARY_BASE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum framed sequence length D.
    pub max_len: usize,
    /// Hidden size L.
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Random features per head.
    pub features: usize,
}

impl ModelConfig {
    /// The small profile used for tests and CPU training.
    pub fn desk(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: 32,
            hidden: 64,
            heads: 4,
            layers: 2,
            dropout: 0.1,
            features: 16,
        }
    }

    pub fn paper_fidelity(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: 202,
            hidden: 768,
            heads: 12,
            layers: 12,
            dropout: 0.2,
            features: 32,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(String::from(msg)));
        if self.vocab_size == 0 || self.hidden == 0 || self.heads == 0 || self.features == 0 {
            return bad("sizes must be positive");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden size must be divisible by heads");
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(ModelError::OddHeadDim(self.head_dim()));
        }
        if self.max_len < 4 {
            return bad("max_len must be at least 4");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("head dimension {0} is odd")]
    OddHeadDim(usize),
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownId { id: usize, vocab: usize },
    #[error("expected {expected} ids, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
