use std::fmt::Write as _;
use std::io::Write;

use super::Embedding2D;
use crate::corpus::Upos;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 30.0;
const LEGEND_WIDTH: f64 = 110.0;

/// One fixed colour per UD tag, so plots of different runs match.
fn colour(tag: Upos) -> &'static str {
    const PALETTE: [&str; 17] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
        "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd", "#636363",
    ];
    let i = Upos::ALL.iter().position(|&t| t == tag).unwrap_or(0);
    PALETTE[i]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `x`, `y`, `tag` rows with a header line.
pub fn write_tsv<W: Write>(embedding: &Embedding2D, mut sink: W) -> std::io::Result<()> {
    let mut out = String::from("x\ty\ttag\n");
    for (c, tag) in embedding.coords.iter().zip(&embedding.labels) {
        let _ = writeln!(out, "{:.6}\t{:.6}\t{}", c[0], c[1], tag);
    }
    sink.write_all(out.as_bytes())
}

/// Static scatter plot coloured by tag, with a legend of the tags present.
pub fn write_svg<W: Write>(embedding: &Embedding2D, title: &str, mut sink: W) -> std::io::Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );

    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &embedding.coords {
        xmin = xmin.min(c[0]);
        xmax = xmax.max(c[0]);
        ymin = ymin.min(c[1]);
        ymax = ymax.max(c[1]);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(xmin, xmax), span(ymin, ymax));
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(out, r#"<g id="points">"#);
    for (c, &tag) in embedding.coords.iter().zip(&embedding.labels) {
        let px = MARGIN + (c[0] - xmin) / sx * plot_w;
        let py = MARGIN + plot_h - (c[1] - ymin) / sy * plot_h;
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{}" fill-opacity="0.7"><title>{tag}</title></circle>"#,
            colour(tag)
        );
    }
    let _ = writeln!(out, "</g>");

    let mut present: Vec<Upos> = embedding.labels.clone();
    present.sort();
    present.dedup();
    let lx = WIDTH - LEGEND_WIDTH;
    let _ = writeln!(out, r#"<g id="legend" font-family="sans-serif" font-size="12">"#);
    for (i, tag) in present.iter().enumerate() {
        let ly = MARGIN + 10.0 + 18.0 * i as f64;
        let _ = writeln!(out, r#"<circle cx="{lx}" cy="{ly}" r="5" fill="{}"/>"#, colour(*tag));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{tag}</text>"#, lx + 10.0, ly + 4.0);
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    sink.write_all(out.as_bytes())
}

/// Writes the TSV and SVG forms of `embedding`.
pub fn emit_scatter<T: Write, S: Write>(embedding: &Embedding2D, title: &str, tsv: T, svg: S) -> std::io::Result<()> {
    write_tsv(embedding, tsv)?;
    write_svg(embedding, title, svg)
}
