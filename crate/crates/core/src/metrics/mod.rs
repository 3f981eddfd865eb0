//! Specialization statistics over routing events.
//!
//! One routing event is a (token, selected expert) pair at one layer, so a
//! layer sees `k` events per token.

mod counts;
mod kl;
mod spec;

use thiserror::Error;

use crate::corpus::Upos;

pub use counts::{count_assignments, token_distribution, word_distribution, AssignmentCounts};
pub use kl::{kl_divergence, kl_divergence_probs, kl_stats, KlReport, DEFAULT_KL_EPSILON};
pub use spec::{spec_global, spec_pos, spec_pos_layer, spec_report, uniform_expectation, SpecReport};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid k = {k} for {n} experts")]
    InvalidK { k: usize, n: usize },
    #[error("{0} has no routing events at any layer")]
    UndefinedPos(Upos),
    #[error("no tag counted towards the global score has routing events")]
    NoGlobalTags,
    #[error("layer {0} has no routing events")]
    EmptyLayer(usize),
    #[error("tag {0} is not in the counted tagset")]
    UnknownTag(Upos),
    #[error("layer {layer} out of range for {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("distributions are over different tagsets")]
    TagsetMismatch,
    #[error("distribution lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}
