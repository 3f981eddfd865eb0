//! Top-k routed Mixture-of-Experts layers, a toy transformer built from
//! them, and synthetic routers used as controlled trace sources.

mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod synthetic;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{parse_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, model_gradient_check, GradCheckReport, GroupError};
pub use layers::{moe_layer_forward, route, route_logits, top_k_indices, Expert, RouterLayer, RoutingDecision};
pub use model::{Block, MoeModel, RoutingTrace};
pub use synthetic::{PosOracle, SyntheticRouter};
pub use train::{train_toy, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum MoeError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("k = {k} must satisfy 1 <= k <= {n}")]
    InvalidK { k: usize, n: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("expert {expert} out of range for {n} experts")]
    ExpertOutOfRange { expert: usize, n: usize },
    #[error("layer has no experts")]
    NoExperts,
    #[error("empty token sequence")]
    EmptyInput,
    #[error("token id {token} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("pos oracle has no route for tag {0}")]
    MissingOracleTag(crate::corpus::Upos),
    #[error("invalid pos oracle: {0}")]
    InvalidOracle(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape and seed of a toy MoE transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_experts: usize,
    /// Experts routed per token.
    pub k: usize,
    pub d_model: usize,
    /// Inner width of each expert.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_experts: 8,
            k: 2,
            d_model: 64,
            d_ff: 128,
            vocab_size: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), MoeError> {
        if self.n_layers == 0 {
            return Err(MoeError::InvalidConfig("n_layers must be >= 1".into()));
        }
        if self.k == 0 || self.k > self.n_experts {
            return Err(MoeError::InvalidK {
                k: self.k,
                n: self.n_experts,
            });
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return Err(MoeError::InvalidConfig("d_model and d_ff must be >= 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(MoeError::InvalidConfig("vocab_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<usize> {
        let d = self.d_model;
        let per_expert = self.d_ff.checked_mul(d)?.checked_mul(2)?.checked_add(self.d_ff + d)?;
        let per_block = d
            .checked_mul(d)?
            .checked_mul(4)?
            .checked_add(d.checked_mul(2)?)?
            .checked_add(self.n_experts.checked_mul(d)?)?
            .checked_add(self.n_experts.checked_mul(per_expert)?)?;
        self.vocab_size
            .checked_mul(d)?
            .checked_mul(2)?
            .checked_add(d)?
            .checked_add(self.n_layers.checked_mul(per_block)?)
    }
}
