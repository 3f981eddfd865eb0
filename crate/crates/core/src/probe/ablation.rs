use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{encode_inputs, evaluate_probe, train_probe, ConfusionMatrix, Encoding, ProbeConfig, ProbeError};
use crate::corpus::{split_indices, Upos};
use crate::trace::{path_vector, PathMode, TokenRecord, TraceHeader};

/// A trace with a fixed train/test split, ready for probing.
pub struct ProbeExperiment<'a> {
    header: &'a TraceHeader,
    records: &'a [TokenRecord],
    labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub mode: PathMode,
    pub layer_range: Range<usize>,
    pub encoding: Encoding,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub epochs_run: usize,
}

impl<'a> ProbeExperiment<'a> {
    pub fn new(header: &'a TraceHeader, records: &'a [TokenRecord], ratio: f64, seed: u64) -> Result<Self, ProbeError> {
        let labels = records
            .iter()
            .map(|r| {
                header
                    .tagset
                    .iter()
                    .position(|&t| t == r.upos)
                    .ok_or(ProbeError::UnknownClass(r.upos))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (train, test) = split_indices(records.len(), ratio, seed)?;
        Ok(ProbeExperiment {
            header,
            records,
            labels,
            train,
            test,
        })
    }

    pub fn classes(&self) -> &[Upos] {
        &self.header.tagset
    }

    pub fn features(&self, mode: PathMode, range: Range<usize>, encoding: Encoding) -> Result<DMatrix<f64>, ProbeError> {
        let paths = self
            .records
            .iter()
            .map(|r| path_vector(r, mode, range.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        encode_inputs(&paths, encoding, self.header.n_experts)
    }

    /// Trains on the train side and scores on the test side.
    pub fn run(&self, mode: PathMode, range: Range<usize>, cfg: &ProbeConfig) -> Result<ProbeOutcome, ProbeError> {
        let x = self.features(mode, range.clone(), cfg.encoding)?;
        let x_train = x.select_rows(&self.train);
        let x_test = x.select_rows(&self.test);
        let y_train: Vec<usize> = self.train.iter().map(|&i| self.labels[i]).collect();
        let y_test: Vec<usize> = self.test.iter().map(|&i| self.labels[i]).collect();
        let model = train_probe(&x_train, &y_train, self.classes().to_vec(), cfg)?;
        let (accuracy, confusion) = evaluate_probe(&model, &x_test, &y_test)?;
        Ok(ProbeOutcome {
            mode,
            layer_range: range,
            encoding: cfg.encoding,
            accuracy,
            confusion,
            epochs_run: model.epochs_run,
        })
    }

    /// Most-common-tag-per-form baseline on the same split.
    pub fn baseline(&self) -> Result<f64, ProbeError> {
        let recs = self.records;
        let side = |idx: &[usize]| -> Vec<(&'a str, Upos)> {
            idx.iter().map(|&i| (recs[i].token_surface.as_str(), recs[i].upos)).collect()
        };
        super::baseline_most_common_pos(side(&self.train), side(&self.test))
    }

    /// Share of the most frequent tag among all records.
    pub fn majority_prior(&self) -> f64 {
        let mut counts = vec![0usize; self.classes().len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.labels.len().max(1) as f64
    }

    /// Probe accuracy with `r = 0..L` layers removed from one side. Every
    /// point uses this experiment's split and `cfg.seed`; points are
    /// trained in parallel.
    pub fn ablation_curve(&self, side: AblationSide, mode: PathMode, cfg: &ProbeConfig) -> Result<Vec<AblationPoint>, ProbeError> {
        let l = self.header.n_layers;
        (0..l)
            .into_par_iter()
            .map(|r| {
                let range = match side {
                    AblationSide::First => r..l,
                    AblationSide::Last => 0..l - r,
                };
                let outcome = self.run(mode, range, cfg)?;
                Ok(AblationPoint {
                    side,
                    layers_removed: r,
                    accuracy: outcome.accuracy,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSide {
    First,
    Last,
}

impl AblationSide {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationSide::First => "first",
            AblationSide::Last => "last",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPoint {
    pub side: AblationSide,
    pub layers_removed: usize,
    pub accuracy: f64,
}

/// Splits `records` with `(ratio, seed)` and runs the ablation for one side.
pub fn ablation_curve(
    header: &TraceHeader,
    records: &[TokenRecord],
    side: AblationSide,
    mode: PathMode,
    cfg: &ProbeConfig,
    ratio: f64,
    seed: u64,
) -> Result<Vec<AblationPoint>, ProbeError> {
    ProbeExperiment::new(header, records, ratio, seed)?.ablation_curve(side, mode, cfg)
}
