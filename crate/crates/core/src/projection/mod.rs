//! 2D projections of path features and scatter export.

mod pca;
mod scatter;
mod tsne;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Upos;

pub use pca::{pca_2d, PcaProjection};
pub use scatter::{emit_scatter, write_svg, write_tsv};
pub use tsne::{tsne_2d, TsneConfig};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("need at least 2 input dimensions, got {0}")]
    TooFewDims(usize),
    #[error("{points} points but {labels} labels")]
    LabelMismatch { points: usize, labels: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("perplexity {perplexity} must be positive and below n/3 = {limit}")]
    InvalidPerplexity { perplexity: f64, limit: f64 },
    #[error("exact t-SNE is limited to {max} points, got {got}")]
    TooManyPoints { max: usize, got: usize },
    #[error("perplexity search did not converge for point {point}")]
    PerplexitySearch { point: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl ProjectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::Tsne => "tsne",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<Upos>,
    pub method: ProjectionMethod,
    /// Method parameters as `(name, value)` pairs, for report headers.
    pub params: Vec<(String, String)>,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}
