//! Plain-text renderers for metric, probe and projection results.
//!
//! Every renderer is a pure function of its inputs: the same inputs give the
//! same bytes. Run parameters (seeds included) go in the header; published
//! figures from the original study appear only in footers, for comparison.

use std::fmt::Write as _;

use crate::corpus::PosDistribution;
use crate::metrics::{KlReport, SpecReport};
use crate::probe::{AblationPoint, ConfusionMatrix, ProbeOutcome};

/// Published reference figures. Displayed for comparison only.
pub mod reference {
    /// `(model, top_k, top_1, Spec, U, ΔU)`.
    pub const SCORES: [(&str, f64, f64, f64, f64, f64); 6] = [
        ("dbrx-base", 0.86, 0.83, 51.87, 25.0, 26.87),
        ("Mixtral-8x7B-v0.1", 0.84, 0.83, 50.21, 25.0, 25.21),
        ("Phi-3.5-MoE-instruct", 0.89, 0.88, 48.49, 12.5, 35.99),
        ("deepseek-moe-16b-base", 0.80, 0.80, 43.60, 9.4, 34.20),
        ("Qwen1.5-MoE-A2.7B", 0.82, 0.79, 38.85, 6.7, 32.15),
        ("OLMoE-1B-7B", 0.75, 0.72, 48.82, 12.5, 36.32),
    ];

    /// Phi-3.5-MoE-instruct: `(POS, max over layers, ΔU)`.
    pub const PHI_MAX: [(&str, f64, f64); 4] = [
        ("NOUN", 61.20, 48.70),
        ("VERB", 61.76, 49.26),
        ("PUNCT", 84.53, 72.03),
        ("ADJ", 58.39, 45.89),
    ];

    /// `(model, μMin, μMax, μMean)`.
    pub const KL: [(&str, f64, f64, f64); 6] = [
        ("dbrx-base", 0.047, 0.55, 0.21),
        ("Mixtral-8x7B-v0.1", 0.11, 0.40, 0.23),
        ("Phi-3.5-MoE-instruct", 0.14, 1.49, 0.60),
        ("deepseek-moe-16b-base", 0.10, 1.73, 0.60),
        ("Qwen1.5-MoE-A2.7B", 0.16, 1.92, 0.73),
        ("OLMoE-1B-7B", 0.04, 1.52, 0.53),
    ];

    /// Accuracy of the most-common-tag-per-word-form baseline.
    pub const FORM_BASELINE: f64 = 0.91;

    /// Corpus tag counts, ascending.
    pub const POS_COUNTS: [(&str, u64); 15] = [
        ("SYM", 82),
        ("X", 84),
        ("INTJ", 1347),
        ("PART", 2675),
        ("CCONJ", 2760),
        ("NUM", 2791),
        ("PRON", 4435),
        ("ADV", 5530),
        ("ADJ", 7125),
        ("PUNCT", 11237),
        ("DET", 11695),
        ("ADP", 11982),
        ("PROPN", 15547),
        ("VERB", 18091),
        ("NOUN", 20998),
    ];
}

const REFERENCE_NOTE: &str = "Reference values from the original study (production models, closed corpus); not reproduced here.";

/// Report title plus the run parameters that produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMeta {
    pub title: String,
    pub params: Vec<(String, String)>,
}

impl ReportMeta {
    pub fn new(title: impl Into<String>) -> Self {
        ReportMeta {
            title: title.into(),
            params: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    fn markdown(&self, out: &mut String) {
        let _ = writeln!(out, "# {}\n", self.title);
        for (k, v) in &self.params {
            let _ = writeln!(out, "- {k}: `{v}`");
        }
        if !self.params.is_empty() {
            out.push('\n');
        }
    }

    /// `# key=value` comment lines for TSV files.
    fn comments(&self, out: &mut String) {
        let _ = writeln!(out, "# {}", self.title);
        for (k, v) in &self.params {
            let _ = writeln!(out, "# {k}={v}");
        }
    }
}

fn signed(v: f64) -> String {
    format!("{v:+.2}")
}

fn opt2(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"))
}

fn table(out: &mut String, head: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", head.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(head.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

/// Rows are tags, columns are layers; undefined cells are `NA`.
pub fn spec_matrix_tsv(meta: &ReportMeta, report: &SpecReport) -> String {
    let mut out = String::new();
    meta.comments(&mut out);
    out.push_str("pos");
    for l in 0..report.n_layers {
        let _ = write!(out, "\tL{l}");
    }
    out.push('\n');
    for (tag, row) in report.tags.iter().zip(&report.spec_matrix) {
        out.push_str(tag.as_str());
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(out, "\t{v:.6}");
                }
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Specialization summary: overall scores, per-tag maxima and per-tag means.
/// `probe` carries the `(top_k, top_1)` accuracies when available.
pub fn spec_markdown(meta: &ReportMeta, model: &str, report: &SpecReport, probe: Option<(f64, f64)>) -> String {
    let mut out = String::new();
    meta.markdown(&mut out);

    out.push_str("## Scores\n\n");
    let (tk, t1) = probe.map_or(("-".into(), "-".into()), |(a, b)| (format!("{a:.2}"), format!("{b:.2}")));
    table(
        &mut out,
        &["model", "top_k", "top_1", "Spec", "U", "ΔU"],
        &[vec![
            model.to_string(),
            tk,
            t1,
            format!("{:.2}", report.global),
            format!("{:.1}", report.uniform),
            signed(report.delta_u),
        ]],
    );

    out.push_str("\n## Maximum specialization per POS\n\n");
    let rows: Vec<Vec<String>> = report
        .tags
        .iter()
        .zip(&report.spec_pos_max)
        .map(|(tag, m)| match m {
            Some((v, l)) => vec![tag.to_string(), format!("{v:.2}"), l.to_string(), signed(v - report.uniform)],
            None => vec![tag.to_string(), "NA".into(), "-".into(), "-".into()],
        })
        .collect();
    table(&mut out, &["POS", "max_l Spec", "layer", "ΔU"], &rows);

    let _ = writeln!(out, "\n## Mean specialization per POS (@{}/{})\n", report.k, report.n_experts);
    let mut rows: Vec<Vec<String>> = report
        .tags
        .iter()
        .enumerate()
        .map(|(i, tag)| {
            let max = report.spec_pos_max[i].map(|(v, _)| v);
            vec![tag.to_string(), format!("{} ({})", opt2(report.spec_pos[i]), opt2(max))]
        })
        .collect();
    rows.push(vec!["(U)".into(), format!("{:.1}", report.uniform)]);
    rows.push(vec!["Mean (Spec)".into(), format!("{:.2}", report.global)]);
    table(&mut out, &["POS", "mean (max)"], &rows);

    out.push_str("\n---\n\n");
    out.push_str(REFERENCE_NOTE);
    out.push_str("\n\n");
    let rows: Vec<Vec<String>> = reference::SCORES
        .iter()
        .map(|&(m, a, b, s, u, d)| {
            vec![m.into(), format!("{a:.2}"), format!("{b:.2}"), format!("{s:.2}"), format!("{u:.1}"), format!("{d:.2}")]
        })
        .collect();
    table(&mut out, &["model", "top_k", "top_1", "Spec", "U", "ΔU"], &rows);
    out.push_str("\nPhi-3.5-MoE-instruct maxima:\n\n");
    let rows: Vec<Vec<String>> = reference::PHI_MAX
        .iter()
        .map(|&(p, m, d)| vec![p.into(), format!("{m:.2}"), signed(d)])
        .collect();
    table(&mut out, &["POS", "max_l Spec", "ΔU"], &rows);
    out
}

/// `[layer][expert]` KL matrix; inactive experts are `NA`.
pub fn kl_matrix_tsv(meta: &ReportMeta, report: &KlReport) -> String {
    let mut out = String::new();
    meta.comments(&mut out);
    let n = report.kl_matrix.first().map_or(0, Vec::len);
    out.push_str("layer");
    for e in 0..n {
        let _ = write!(out, "\tE{e}");
    }
    out.push('\n');
    for (l, row) in report.kl_matrix.iter().enumerate() {
        let _ = write!(out, "{l}");
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(out, "\t{v:.6}");
                }
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn kl_markdown(meta: &ReportMeta, model: &str, report: &KlReport) -> String {
    let mut out = String::new();
    meta.markdown(&mut out);
    out.push_str("## KL divergence statistics\n\n");
    table(
        &mut out,
        &["model", "μ Min", "μ Max", "μ Mean"],
        &[vec![
            model.to_string(),
            format!("{:.3}", report.mu_min),
            format!("{:.3}", report.mu_max),
            format!("{:.3}", report.mu_mean),
        ]],
    );

    out.push_str("\n## Per layer\n\n");
    let rows: Vec<Vec<String>> = report
        .kl_matrix
        .iter()
        .enumerate()
        .map(|(l, row)| {
            let active: Vec<f64> = row.iter().flatten().copied().collect();
            if active.is_empty() {
                return vec![l.to_string(), "0".into(), "NA".into(), "NA".into(), "NA".into()];
            }
            let min = active.iter().copied().fold(f64::INFINITY, f64::min);
            let max = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = active.iter().sum::<f64>() / active.len() as f64;
            vec![l.to_string(), active.len().to_string(), format!("{min:.4}"), format!("{max:.4}"), format!("{mean:.4}")]
        })
        .collect();
    table(&mut out, &["layer", "active experts", "min", "max", "mean"], &rows);

    out.push_str("\n---\n\n");
    out.push_str(REFERENCE_NOTE);
    out.push_str("\n\n");
    let rows: Vec<Vec<String>> = reference::KL
        .iter()
        .map(|&(m, a, b, c)| vec![m.into(), a.to_string(), format!("{b:.2}"), format!("{c:.2}")])
        .collect();
    table(&mut out, &["model", "μ Min", "μ Max", "μ Mean"], &rows);
    out
}

/// Raw counts, true classes as rows.
pub fn confusion_tsv(meta: &ReportMeta, cm: &ConfusionMatrix) -> String {
    let mut out = String::new();
    meta.comments(&mut out);
    out.push_str("true\\pred");
    for c in &cm.classes {
        let _ = write!(out, "\t{c}");
    }
    out.push('\n');
    for (c, row) in cm.classes.iter().zip(&cm.counts) {
        out.push_str(c.as_str());
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Row-normalized percentages; rows with no true samples are `-`.
pub fn confusion_markdown(cm: &ConfusionMatrix) -> String {
    let mut out = String::new();
    let mut head = vec!["true \\ pred"];
    head.extend(cm.classes.iter().map(|c| c.as_str()));
    let rows: Vec<Vec<String>> = cm
        .classes
        .iter()
        .zip(&cm.counts)
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            let mut r = vec![c.to_string()];
            r.extend(row.iter().map(|&v| {
                if total == 0 {
                    "-".to_string()
                } else {
                    format!("{:.1}", 100.0 * v as f64 / total as f64)
                }
            }));
            r
        })
        .collect();
    table(&mut out, &head, &rows);
    out
}

/// Probe results against the form baseline and the majority prior.
pub fn probe_markdown(meta: &ReportMeta, outcomes: &[ProbeOutcome], baseline: f64, prior: f64) -> String {
    let mut out = String::new();
    meta.markdown(&mut out);
    out.push_str("## Probe accuracy\n\n");
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.mode.as_str().to_string(),
                o.encoding.to_string(),
                format!("{}..{}", o.layer_range.start, o.layer_range.end),
                format!("{:.4}", o.accuracy),
                o.epochs_run.to_string(),
            ]
        })
        .collect();
    table(&mut out, &["path", "encoding", "layers", "accuracy", "epochs"], &rows);
    let _ = writeln!(out, "\n- most common POS per form: {baseline:.4}");
    let _ = writeln!(out, "- majority-class prior: {prior:.4}");
    for o in outcomes {
        let _ = writeln!(out, "\n## Confusion ({}, {}, row %)\n", o.mode.as_str(), o.encoding);
        out.push_str(&confusion_markdown(&o.confusion));
    }
    out.push_str("\n---\n\n");
    out.push_str(REFERENCE_NOTE);
    out.push_str("\n\n");
    let rows: Vec<Vec<String>> = reference::SCORES
        .iter()
        .map(|&(m, a, b, ..)| vec![m.into(), format!("{a:.2}"), format!("{b:.2}")])
        .collect();
    table(&mut out, &["model", "top_k", "top_1"], &rows);
    let _ = writeln!(out, "\nMost common POS per form: {:.2}", reference::FORM_BASELINE);
    out
}

pub fn ablation_tsv(meta: &ReportMeta, points: &[AblationPoint]) -> String {
    let mut out = String::new();
    meta.comments(&mut out);
    out.push_str("layers_removed\tside\taccuracy\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{:.6}", p.layers_removed, p.side.as_str(), p.accuracy);
    }
    out
}

/// Tag counts and shares, ascending by count (ties keep tagset order).
pub fn distribution_markdown(meta: &ReportMeta, dist: &PosDistribution) -> String {
    let mut out = String::new();
    meta.markdown(&mut out);
    let total = dist.total();
    let mut order: Vec<usize> = (0..dist.tags().len()).collect();
    order.sort_by_key(|&i| dist.counts()[i]);
    let mut rows: Vec<Vec<String>> = order
        .iter()
        .map(|&i| {
            let c = dist.counts()[i];
            let pct = if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
            vec![dist.tags()[i].to_string(), c.to_string(), format!("{pct:.2}%")]
        })
        .collect();
    rows.push(vec!["Total".into(), total.to_string(), "100.00%".into()]);
    table(&mut out, &["POS", "Count", "% of Total"], &rows);
    out.push_str("\n---\n\n");
    out.push_str(REFERENCE_NOTE);
    out.push_str("\n\n");
    let ref_total: u64 = reference::POS_COUNTS.iter().map(|&(_, c)| c).sum();
    let rows: Vec<Vec<String>> = reference::POS_COUNTS
        .iter()
        .map(|&(p, c)| vec![p.into(), c.to_string(), format!("{:.2}%", 100.0 * c as f64 / ref_total as f64)])
        .collect();
    table(&mut out, &["POS", "Count", "% of Total"], &rows);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PosTagset, Upos};
    use crate::metrics::{kl_stats, spec_report, AssignmentCounts, DEFAULT_KL_EPSILON};
    use crate::probe::AblationSide;

    fn counts() -> (AssignmentCounts, PosTagset) {
        let tagset = PosTagset::default();
        let mut c = AssignmentCounts::new(2, 4, 2, tagset.tags().to_vec());
        let noun = c.tag_index(Upos::Noun).unwrap();
        let verb = c.tag_index(Upos::Verb).unwrap();
        for l in 0..2 {
            c.set(l, 0, noun, 6);
            c.set(l, 1, noun, 2);
            c.set(l, 2, verb, 3);
            c.set(l, 3, verb, 1);
        }
        (c, tagset)
    }

    #[test]
    fn spec_tsv_shape() {
        let (c, t) = counts();
        let r = spec_report(&c, &t).unwrap();
        let tsv = spec_matrix_tsv(&ReportMeta::new("spec").with("seed", 3), &r);
        let body: Vec<&str> = tsv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "pos\tL0\tL1");
        assert_eq!(body.len(), 1 + t.len());
        let noun = body.iter().find(|l| l.starts_with("NOUN\t")).unwrap();
        assert_eq!(*noun, "NOUN\t100.000000\t100.000000");
        assert!(body.iter().any(|l| *l == "ADJ\tNA\tNA"));
        assert!(tsv.contains("# seed=3"));
    }

    #[test]
    fn spec_markdown_has_argmax_layer_and_footer() {
        let (c, t) = counts();
        let r = spec_report(&c, &t).unwrap();
        let md = spec_markdown(&ReportMeta::new("s"), "toy", &r, Some((0.5, 0.25)));
        assert!(md.contains("| toy | 0.50 | 0.25 | 100.00 | 50.0 | +50.00 |"));
        assert!(md.contains("| NOUN | 100.00 | 0 | +50.00 |"));
        assert!(md.contains("| Mixtral-8x7B-v0.1 | 0.84 | 0.83 | 50.21 | 25.0 | 25.21 |"));
        assert!(md.contains("| PUNCT | 84.53 | +72.03 |"));
    }

    #[test]
    fn kl_markdown_lists_layers() {
        let (c, t) = counts();
        let noun = t.index_of(Upos::Noun).unwrap();
        let verb = t.index_of(Upos::Verb).unwrap();
        let mut corpus = vec![0u64; t.len()];
        corpus[noun] = 1;
        corpus[verb] = 1;
        let dist = PosDistribution::from_counts(t.tags().to_vec(), corpus).unwrap();
        let kl = kl_stats(&c, &dist, DEFAULT_KL_EPSILON).unwrap();
        let md = kl_markdown(&ReportMeta::new("kl"), "toy", &kl);
        assert!(md.contains("| 1 | 4 |"));
        assert!(md.contains("| Mixtral-8x7B-v0.1 | 0.11 | 0.40 | 0.23 |"));
        let tsv = kl_matrix_tsv(&ReportMeta::new("kl"), &kl);
        assert_eq!(tsv.lines().nth(1).unwrap(), "layer\tE0\tE1\tE2\tE3");
    }

    #[test]
    fn confusion_rows_are_percentages() {
        let cm = ConfusionMatrix::from_predictions(vec![Upos::Noun, Upos::Verb], &[0, 0, 0, 0], &[0, 0, 0, 1]);
        let md = confusion_markdown(&cm);
        assert!(md.contains("| NOUN | 75.0 | 25.0 |"));
        assert!(md.contains("| VERB | - | - |"));
        let tsv = confusion_tsv(&ReportMeta::new("c"), &cm);
        assert!(tsv.ends_with("NOUN\t3\t1\nVERB\t0\t0\n"));
    }

    #[test]
    fn ablation_rows() {
        let pts = [
            AblationPoint {
                side: AblationSide::First,
                layers_removed: 0,
                accuracy: 0.5,
            },
            AblationPoint {
                side: AblationSide::Last,
                layers_removed: 3,
                accuracy: 0.25,
            },
        ];
        let tsv = ablation_tsv(&ReportMeta::new("a"), &pts);
        assert!(tsv.ends_with("layers_removed\tside\taccuracy\n0\tfirst\t0.500000\n3\tlast\t0.250000\n"));
    }

    #[test]
    fn distribution_percentages_sum_to_100() {
        let tags = PosTagset::default().tags().to_vec();
        let counts: Vec<u64> = (0..tags.len() as u64).map(|i| i * 7 + 1).collect();
        let dist = PosDistribution::from_counts(tags, counts).unwrap();
        let md = distribution_markdown(&ReportMeta::new("d"), &dist);
        let body = md.split("---\n").next().unwrap();
        let sum: f64 = body
            .lines()
            .filter(|l| l.starts_with("| ") && !l.contains("Total") && !l.contains("POS"))
            .map(|l| l.split('|').nth(3).unwrap().trim().trim_end_matches('%').parse::<f64>().unwrap())
            .sum();
        assert!((sum - 100.0).abs() < 0.1, "{sum}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let (c, t) = counts();
        let r = spec_report(&c, &t).unwrap();
        let m = ReportMeta::new("s").with("seed", 1);
        assert_eq!(spec_markdown(&m, "x", &r, None), spec_markdown(&m, "x", &r, None));
    }
}
