//! MLP probe predicting a token's POS from its routing path.

mod ablation;
mod baseline;
mod mlp;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Upos};
use crate::trace::{PathVector, TraceError};

pub use ablation::{ablation_curve, AblationPoint, AblationSide, ProbeExperiment, ProbeOutcome};
pub use baseline::baseline_most_common_pos;
pub use mlp::{evaluate_probe, probe_gradient_check, train_probe, ProbeModel};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("paths differ in length or mode (path {index})")]
    MixedPaths { index: usize },
    #[error("no input rows")]
    Empty,
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("{samples} samples cannot cover {classes} classes")]
    TooFewSamples { samples: usize, classes: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input has {found} features, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("expert index {expert} out of range for {n_experts} experts")]
    ExpertOutOfRange { expert: usize, n_experts: usize },
    #[error("feature matrix contains a non-finite value")]
    NonFiniteInput,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("tag {0} is not a probe class")]
    UnknownClass(Upos),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Expert indices used directly as real-valued features.
    #[default]
    RawIndex,
    /// One indicator block of width `N` per path position.
    OneHot,
}

impl Encoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::RawIndex => "raw_index",
            Encoding::OneHot => "one_hot",
        }
    }
}

impl std::fmt::Display for Encoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw_index" => Ok(Encoding::RawIndex),
            "one_hot" => Ok(Encoding::OneHot),
            other => Err(format!("unknown encoding {other:?} (expected raw_index or one_hot)")),
        }
    }
}

/// Defaults follow scikit-learn's `MLPClassifier` with a raised epoch cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Minimum training-loss improvement that resets the patience counter.
    pub convergence_tol: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// L2 penalty on weights.
    pub alpha: f64,
    pub seed: u64,
    pub encoding: Encoding,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_width: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 200,
            max_epochs: 300,
            convergence_tol: 1e-4,
            patience: 10,
            alpha: 1e-4,
            seed: 0,
            encoding: Encoding::RawIndex,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if self.hidden_width == 0 {
            return bad("hidden_width must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0) || !(self.convergence_tol >= 0.0) {
            return bad("alpha and convergence_tol must be >= 0");
        }
        Ok(())
    }
}

/// Builds the feature matrix, one row per path.
pub fn encode_inputs(paths: &[PathVector], encoding: Encoding, n_experts: usize) -> Result<DMatrix<f64>, ProbeError> {
    let first = paths.first().ok_or(ProbeError::Empty)?;
    let s = first.values.len();
    let dim = match encoding {
        Encoding::RawIndex => s,
        Encoding::OneHot => s * n_experts,
    };
    let mut x = DMatrix::zeros(paths.len(), dim);
    for (i, p) in paths.iter().enumerate() {
        if p.values.len() != s || p.mode != first.mode {
            return Err(ProbeError::MixedPaths { index: i });
        }
        for (j, &e) in p.values.iter().enumerate() {
            if e >= n_experts {
                return Err(ProbeError::ExpertOutOfRange { expert: e, n_experts });
            }
            match encoding {
                Encoding::RawIndex => x[(i, j)] = e as f64,
                Encoding::OneHot => x[(i, j * n_experts + e)] = 1.0,
            }
        }
    }
    Ok(x)
}

/// Counts of true (rows) against predicted (columns) classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<Upos>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(classes: Vec<Upos>, truth: &[usize], predicted: &[usize]) -> Self {
        let n = classes.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t][p] += 1;
        }
        ConfusionMatrix { classes, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    /// Recall of class `i`, `None` when it never occurs in the truth.
    pub fn recall(&self, i: usize) -> Option<f64> {
        let row: u64 = self.counts[i].iter().sum();
        (row > 0).then(|| self.counts[i][i] as f64 / row as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PathMode;

    fn pv(values: Vec<usize>, mode: PathMode) -> PathVector {
        let n = values.len();
        PathVector { values, mode, layer_range: 0..n }
    }

    #[test]
    fn mixtral_shaped_encodings() {
        let paths: Vec<_> = (0..3).map(|i| pv((0..64).map(|j| (i + j) % 8).collect(), PathMode::TopK)).collect();
        let raw = encode_inputs(&paths, Encoding::RawIndex, 8).unwrap();
        assert_eq!(raw.ncols(), 64);
        assert_eq!(raw[(1, 2)], 3.0);
        let hot = encode_inputs(&paths, Encoding::OneHot, 8).unwrap();
        assert_eq!(hot.ncols(), 512);
        for i in 0..3 {
            assert_eq!(hot.row(i).sum(), 64.0);
        }
        let top1 = vec![pv(vec![0; 32], PathMode::Top1)];
        assert_eq!(encode_inputs(&top1, Encoding::RawIndex, 8).unwrap().ncols(), 32);
    }

    #[test]
    fn mixed_lengths_rejected() {
        let paths = vec![pv(vec![0, 1], PathMode::TopK), pv(vec![0], PathMode::TopK)];
        assert!(matches!(
            encode_inputs(&paths, Encoding::RawIndex, 4),
            Err(ProbeError::MixedPaths { index: 1 })
        ));
        assert!(matches!(encode_inputs(&[], Encoding::OneHot, 4), Err(ProbeError::Empty)));
    }

    #[test]
    fn confusion_accuracy_is_trace_over_total() {
        let cm = ConfusionMatrix::from_predictions(vec![Upos::Noun, Upos::Verb, Upos::Adj], &[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2]);
        assert_eq!(cm.total(), 6);
        let diag: u64 = (0..3).map(|i| cm.counts[i][i]).sum();
        assert_eq!(cm.accuracy(), diag as f64 / 6.0);
        assert_eq!(cm.recall(0), Some(0.5));
    }

    #[test]
    fn encoding_names_round_trip() {
        for e in [Encoding::RawIndex, Encoding::OneHot] {
            assert_eq!(e.as_str().parse::<Encoding>().unwrap(), e);
        }
    }
}
