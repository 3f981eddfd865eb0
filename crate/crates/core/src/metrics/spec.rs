use serde::Serialize;

use super::{AssignmentCounts, MetricsError};
use crate::corpus::{PosTagset, Upos};

/// Expected top-k capture in percent if routing ignored the token.
pub fn uniform_expectation(k: usize, n: usize) -> Result<f64, MetricsError> {
    if k == 0 || k > n {
        return Err(MetricsError::InvalidK { k, n });
    }
    Ok(100.0 * k as f64 / n as f64)
}

fn pos_index(counts: &AssignmentCounts, pos: Upos) -> Result<usize, MetricsError> {
    counts.tag_index(pos).ok_or(MetricsError::UnknownTag(pos))
}

/// Percentage of `pos` events at `layer` captured by its `k` busiest
/// experts, or `None` when the tag has no events there.
pub fn spec_pos_layer(counts: &AssignmentCounts, pos: Upos, layer: usize, k: usize) -> Result<Option<f64>, MetricsError> {
    let p = pos_index(counts, pos)?;
    if layer >= counts.n_layers() {
        return Err(MetricsError::LayerOutOfRange {
            layer,
            n_layers: counts.n_layers(),
        });
    }
    if k == 0 || k > counts.n_experts() {
        return Err(MetricsError::InvalidK { k, n: counts.n_experts() });
    }
    let mut per_expert: Vec<(usize, u64)> = counts.expert_counts(layer, p).into_iter().enumerate().collect();
    let total: u64 = per_expert.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        return Ok(None);
    }
    per_expert.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: u64 = per_expert[..k].iter().map(|&(_, c)| c).sum();
    Ok(Some(100.0 * top as f64 / total as f64))
}

/// Mean of the defined layer scores of `pos`.
pub fn spec_pos(counts: &AssignmentCounts, pos: Upos, k: usize) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for l in 0..counts.n_layers() {
        if let Some(v) = spec_pos_layer(counts, pos, l, k)? {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::UndefinedPos(pos));
    }
    Ok(sum / n as f64)
}

/// Unweighted mean of `spec_pos` over the tags that count towards the
/// global score. Tags without any events are skipped.
pub fn spec_global(counts: &AssignmentCounts, tagset: &PosTagset, k: usize) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tag in tagset.global_tags() {
        match spec_pos(counts, tag, k) {
            Ok(v) => {
                sum += v;
                n += 1;
            }
            Err(MetricsError::UndefinedPos(_)) | Err(MetricsError::UnknownTag(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(MetricsError::NoGlobalTags);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecReport {
    pub k: usize,
    pub n_experts: usize,
    pub n_layers: usize,
    pub tags: Vec<Upos>,
    /// `[tag][layer]`; `None` where the tag has no events.
    pub spec_matrix: Vec<Vec<Option<f64>>>,
    pub spec_pos: Vec<Option<f64>>,
    /// Best layer score and its layer.
    pub spec_pos_max: Vec<Option<(f64, usize)>>,
    pub global: f64,
    pub uniform: f64,
    pub delta_u: f64,
}

impl SpecReport {
    pub fn row(&self, tag: Upos) -> Option<usize> {
        self.tags.iter().position(|&t| t == tag)
    }
}

pub fn spec_report(counts: &AssignmentCounts, tagset: &PosTagset) -> Result<SpecReport, MetricsError> {
    let k = counts.k();
    let uniform = uniform_expectation(k, counts.n_experts())?;
    let tags = tagset.tags().to_vec();
    let mut spec_matrix = Vec::with_capacity(tags.len());
    let mut spec_pos_v = Vec::with_capacity(tags.len());
    let mut spec_pos_max = Vec::with_capacity(tags.len());
    for &tag in &tags {
        let row: Vec<Option<f64>> = if counts.tag_index(tag).is_some() {
            (0..counts.n_layers())
                .map(|l| spec_pos_layer(counts, tag, l, k))
                .collect::<Result<_, _>>()?
        } else {
            vec![None; counts.n_layers()]
        };
        let defined: Vec<(usize, f64)> = row.iter().enumerate().filter_map(|(l, v)| v.map(|v| (l, v))).collect();
        if defined.is_empty() {
            spec_pos_v.push(None);
            spec_pos_max.push(None);
        } else {
            spec_pos_v.push(Some(defined.iter().map(|&(_, v)| v).sum::<f64>() / defined.len() as f64));
            // First layer wins ties.
            let (l, v) = defined
                .iter()
                .copied()
                .fold(defined[0], |best, cur| if cur.1 > best.1 { cur } else { best });
            spec_pos_max.push(Some((v, l)));
        }
        spec_matrix.push(row);
    }
    let global = spec_global(counts, tagset, k)?;
    Ok(SpecReport {
        k,
        n_experts: counts.n_experts(),
        n_layers: counts.n_layers(),
        tags,
        spec_matrix,
        spec_pos: spec_pos_v,
        spec_pos_max,
        global,
        uniform,
        delta_u: global - uniform,
    })
}
