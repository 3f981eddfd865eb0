use serde::Serialize;

use super::{AssignmentCounts, MetricsError};
use crate::corpus::PosDistribution;

pub const DEFAULT_KL_EPSILON: f64 = 1e-9;

fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = p.iter().map(|v| v + eps).sum();
    p.iter().map(|v| (v + eps) / total).collect()
}

/// `KL(p ‖ q)` in nats after adding `eps` to every entry of both arguments
/// and renormalizing.
pub fn kl_divergence_probs(p: &[f64], q: &[f64], eps: f64) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::LengthMismatch(p.len(), q.len()));
    }
    let p = smooth(p, eps);
    let q = smooth(q, eps);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    // Rounding can leave a tiny negative value for identical inputs.
    Ok(kl.max(0.0))
}

pub fn kl_divergence(expert: &PosDistribution, corpus: &PosDistribution, eps: f64) -> Result<f64, MetricsError> {
    if expert.tags() != corpus.tags() {
        return Err(MetricsError::TagsetMismatch);
    }
    kl_divergence_probs(&expert.probabilities(), &corpus.probabilities(), eps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    /// `[layer][expert]`; `None` for experts with no events at that layer.
    pub kl_matrix: Vec<Vec<Option<f64>>>,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_mean: f64,
}

/// Divergence of every active expert's tag distribution from `corpus`,
/// summarized per layer by min, max and mean, then averaged over layers.
pub fn kl_stats(counts: &AssignmentCounts, corpus: &PosDistribution, eps: f64) -> Result<KlReport, MetricsError> {
    if counts.tags() != corpus.tags() {
        return Err(MetricsError::TagsetMismatch);
    }
    let q = corpus.probabilities();
    let mut kl_matrix = Vec::with_capacity(counts.n_layers());
    let (mut sum_min, mut sum_max, mut sum_mean) = (0.0, 0.0, 0.0);
    for l in 0..counts.n_layers() {
        let mut row = Vec::with_capacity(counts.n_experts());
        let mut active = Vec::new();
        for e in 0..counts.n_experts() {
            let c = counts.pos_counts(l, e);
            let total: u64 = c.iter().sum();
            if total == 0 {
                row.push(None);
                continue;
            }
            let p: Vec<f64> = c.iter().map(|&v| v as f64 / total as f64).collect();
            let kl = kl_divergence_probs(&p, &q, eps)?;
            active.push(kl);
            row.push(Some(kl));
        }
        if active.is_empty() {
            return Err(MetricsError::EmptyLayer(l));
        }
        sum_min += active.iter().copied().fold(f64::INFINITY, f64::min);
        sum_max += active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        sum_mean += active.iter().sum::<f64>() / active.len() as f64;
        kl_matrix.push(row);
    }
    let n = counts.n_layers() as f64;
    Ok(KlReport {
        kl_matrix,
        mu_min: sum_min / n,
        mu_max: sum_max / n,
        mu_mean: sum_mean / n,
    })
}
