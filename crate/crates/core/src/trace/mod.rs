//! Routing traces: the per-token, per-layer record of which experts were
//! selected and with what gate weight.
//!
//! On disk a trace is JSON Lines: a header object on the first line, then
//! one [`TokenRecord`] per line.

mod io;
mod validate;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PosTagset, Upos};
use crate::moe::RoutingDecision;
use crate::tokenizer::AlignedToken;

pub use io::{read_trace, write_trace, TraceReader, TraceWriter};
pub use validate::{check_header, check_record, gate_sum_tolerance, validate_trace, ValidationReport, Violation, MAX_VIOLATIONS};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace has no header line")]
    MissingHeader,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("unsupported trace version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("record {record}: file is truncated")]
    Truncated { record: usize },
    #[error("record {record}: malformed JSON: {message}")]
    Malformed { record: usize, message: String },
    #[error("record {record}: {message}")]
    Invalid { record: usize, message: String },
    #[error("empty layer range {0:?}")]
    EmptyRange(Range<usize>),
    #[error("layer range {range:?} exceeds {n_layers} layers")]
    RangeOutOfBounds { range: Range<usize>, n_layers: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_version() -> u32 {
    TRACE_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub model_name: String,
    pub n_layers: usize,
    pub n_experts: usize,
    pub k: usize,
    pub tokenizer_id: String,
    pub tagset: Vec<Upos>,
    #[serde(default = "default_version")]
    pub version: u32,
}

impl TraceHeader {
    pub fn new(model_name: impl Into<String>, n_layers: usize, n_experts: usize, k: usize, tokenizer_id: impl Into<String>, tagset: &PosTagset) -> Self {
        TraceHeader {
            model_name: model_name.into(),
            n_layers,
            n_experts,
            k,
            tokenizer_id: tokenizer_id.into(),
            tagset: tagset.tags().to_vec(),
            version: TRACE_FORMAT_VERSION,
        }
    }

    /// Size of a full top-k path, `n_layers · k`.
    pub fn signal_size(&self) -> usize {
        self.n_layers * self.k
    }
}

/// One `(expert, gate)` pair.
pub type ExpertGate = (usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    #[serde(rename = "sid")]
    pub sentence_id: usize,
    #[serde(rename = "wid")]
    pub word_index: usize,
    #[serde(rename = "tok")]
    pub token_surface: String,
    #[serde(rename = "tid")]
    pub token_id: u32,
    #[serde(rename = "pos")]
    pub upos: Upos,
    /// `layers[l]` holds the `k` selected experts at layer `l`, highest
    /// gate first.
    pub layers: Vec<Vec<ExpertGate>>,
}

impl TokenRecord {
    /// Builds a record from one token's decisions, one per layer. Pairs are
    /// sorted by descending gate; equal gates keep their selection order.
    pub fn from_decisions(token: &AlignedToken, decisions: &[RoutingDecision]) -> Self {
        let layers = decisions
            .iter()
            .map(|d| {
                let mut pairs: Vec<ExpertGate> = d.selected.iter().copied().zip(d.gates.iter().copied()).collect();
                pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
                pairs
            })
            .collect();
        TokenRecord {
            sentence_id: token.sentence_id,
            word_index: token.word_index,
            token_surface: token.surface.clone(),
            token_id: token.token_id,
            upos: token.upos,
            layers,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Pairs aligned tokens with their routing decisions (`trace[token][layer]`).
pub fn build_records(tokens: &[AlignedToken], trace: &[Vec<RoutingDecision>]) -> Vec<TokenRecord> {
    assert_eq!(tokens.len(), trace.len(), "one decision list per token");
    tokens
        .iter()
        .zip(trace)
        .map(|(t, d)| TokenRecord::from_decisions(t, d))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// All `k` experts per layer.
    TopK,
    /// Only the highest-gate expert per layer.
    Top1,
}

impl PathMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PathMode::TopK => "top_k",
            PathMode::Top1 => "top_1",
        }
    }
}

/// Flattened expert indices of a token's path over a layer range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathVector {
    pub values: Vec<usize>,
    pub mode: PathMode,
    pub layer_range: Range<usize>,
}

/// Flattens a record's experts layer-major, then by gate rank.
pub fn path_vector(record: &TokenRecord, mode: PathMode, layer_range: Range<usize>) -> Result<PathVector, TraceError> {
    if layer_range.start >= layer_range.end {
        return Err(TraceError::EmptyRange(layer_range));
    }
    if layer_range.end > record.n_layers() {
        return Err(TraceError::RangeOutOfBounds {
            range: layer_range,
            n_layers: record.n_layers(),
        });
    }
    let layers = &record.layers[layer_range.clone()];
    let values = match mode {
        PathMode::TopK => layers.iter().flat_map(|l| l.iter().map(|&(e, _)| e)).collect(),
        PathMode::Top1 => layers.iter().map(|l| l.first().map_or(0, |&(e, _)| e)).collect(),
    };
    Ok(PathVector { values, mode, layer_range })
}
