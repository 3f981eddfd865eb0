use super::{TokenRecord, TraceError, TraceHeader, TRACE_FORMAT_VERSION};

pub const MAX_VIOLATIONS: usize = 100;

/// Allowed deviation of a layer's gate sum from 1. Gates are stored with 6
/// significant digits, so each stored gate below 1 may be off by up to
/// 5e-7; the tolerance grows with `k` to admit that rounding.
pub fn gate_sum_tolerance(k: usize) -> f64 {
    1e-6 + 5e-7 * k as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for header problems.
    pub record: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    /// At most [`MAX_VIOLATIONS`] entries, in record order.
    pub violations: Vec<Violation>,
    /// Total number of violations found, including unreported ones.
    pub total: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.total == 0
    }
}

pub fn check_header(header: &TraceHeader) -> Result<(), TraceError> {
    if header.version != TRACE_FORMAT_VERSION {
        return Err(TraceError::VersionMismatch {
            found: header.version,
            expected: TRACE_FORMAT_VERSION,
        });
    }
    if header.n_layers == 0 || header.n_experts == 0 || header.k == 0 {
        return Err(TraceError::InvalidHeader("n_layers, n_experts and k must be >= 1".into()));
    }
    if header.k > header.n_experts {
        return Err(TraceError::InvalidHeader(format!(
            "k = {} exceeds n_experts = {}",
            header.k, header.n_experts
        )));
    }
    if header.tagset.is_empty() {
        return Err(TraceError::InvalidHeader("empty tagset".into()));
    }
    Ok(())
}

/// Checks one record against the header; the message names the first
/// problem found.
pub fn check_record(header: &TraceHeader, record: &TokenRecord) -> Result<(), String> {
    if !header.tagset.contains(&record.upos) {
        return Err(format!("tag {} is not in the header tagset", record.upos));
    }
    if record.layers.len() != header.n_layers {
        return Err(format!("{} layers, expected {}", record.layers.len(), header.n_layers));
    }
    let tol = gate_sum_tolerance(header.k);
    for (l, pairs) in record.layers.iter().enumerate() {
        if pairs.len() != header.k {
            return Err(format!("layer {l}: {} experts, expected k = {}", pairs.len(), header.k));
        }
        for (i, &(e, g)) in pairs.iter().enumerate() {
            if e >= header.n_experts {
                return Err(format!("layer {l}: expert {e} out of range [0, {})", header.n_experts));
            }
            if pairs[..i].iter().any(|&(prev, _)| prev == e) {
                return Err(format!("layer {l}: expert {e} selected twice"));
            }
            if !g.is_finite() || g < 0.0 {
                return Err(format!("layer {l}: invalid gate weight {g}"));
            }
            if i > 0 && g > pairs[i - 1].1 + tol {
                return Err(format!("layer {l}: gates not in descending order"));
            }
        }
        let sum: f64 = pairs.iter().map(|&(_, g)| g).sum();
        if (sum - 1.0).abs() > tol {
            return Err(format!("layer {l}: gate weights sum to {sum}"));
        }
    }
    Ok(())
}

/// Checks every record invariant; never fails, reports instead.
pub fn validate_trace(header: &TraceHeader, records: &[TokenRecord]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |record: Option<usize>, message: String| {
        report.total += 1;
        if report.violations.len() < MAX_VIOLATIONS {
            report.violations.push(Violation { record, message });
        }
    };
    if let Err(e) = check_header(header) {
        push(None, e.to_string());
        return report;
    }
    for (i, r) in records.iter().enumerate() {
        if let Err(message) = check_record(header, r) {
            push(Some(i), message);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PosTagset, Upos};
    use crate::trace::tests::record;

    fn header(n_layers: usize, n_experts: usize, k: usize) -> TraceHeader {
        TraceHeader::new("toy", n_layers, n_experts, k, "bpe-test", &PosTagset::default())
    }

    #[test]
    fn valid_trace_has_empty_report() {
        let records: Vec<_> = (0..20).map(|i| record(4, 2, 8, i)).collect();
        let report = validate_trace(&header(4, 8, 2), &records);
        assert!(report.is_valid(), "{report:?}");
        assert!(report.violations.is_empty());
    }

    #[test]
    fn expert_index_equal_to_n_is_violation() {
        let mut r = record(4, 2, 8, 0);
        r.layers[2][1].0 = 8;
        let report = validate_trace(&header(4, 8, 2), &[record(4, 2, 8, 1), r]);
        assert_eq!(report.total, 1);
        assert_eq!(report.violations[0].record, Some(1));
        assert!(report.violations[0].message.contains("out of range"));
    }

    #[test]
    fn gates_summing_to_point_nine() {
        let mut r = record(4, 2, 8, 0);
        r.layers[0] = vec![(0, 0.45), (1, 0.45)];
        let report = validate_trace(&header(4, 8, 2), &[r]);
        assert_eq!(report.total, 1);
        assert!(report.violations[0].message.contains("sum"));
    }

    #[test]
    fn short_layer_and_bad_tag() {
        let mut r = record(4, 2, 8, 0);
        r.layers[3].pop();
        let mut s = record(4, 2, 8, 1);
        s.upos = Upos::Aux;
        let report = validate_trace(&header(4, 8, 2), &[r, s]);
        assert_eq!(report.total, 2);
    }

    #[test]
    fn report_is_capped() {
        let records: Vec<_> = (0..150)
            .map(|i| {
                let mut r = record(2, 2, 8, i);
                r.layers.pop();
                r
            })
            .collect();
        let report = validate_trace(&header(2, 8, 2), &records);
        assert_eq!(report.total, 150);
        assert_eq!(report.violations.len(), MAX_VIOLATIONS);
    }

    #[test]
    fn rounding_tolerance_admits_eight_way_gates() {
        let mut r = record(1, 8, 64, 0);
        r.layers[0] = (0..8).map(|e| (e, 0.125_000_4)).collect();
        assert!(check_record(&header(1, 64, 8), &r).is_ok());
    }

    #[test]
    fn bad_headers() {
        let mut h = header(4, 8, 2);
        h.k = 9;
        assert!(!validate_trace(&h, &[]).is_valid());
        let mut h = header(4, 8, 2);
        h.version = 2;
        assert!(matches!(check_header(&h), Err(TraceError::VersionMismatch { found: 2, .. })));
    }
}
