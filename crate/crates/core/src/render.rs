//! Text and SVG views of a scored fragment triangle.
//!
//! The apex (the whole text) is drawn on top and single tokens at the
//! bottom. Maxima are those of the displayed metric; aligned fragments are
//! the spans the aligner keeps for the feature.

use std::fmt::Write as _;

use crate::align::{align_feature, maxima, score_fragments, AlignConfig, Metric};
use crate::corpus::{Feature, Instance};
use crate::lattice::{Span, TriangleIndex};
use crate::stats::CooccurrenceTable;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleView {
    pub tokens: Vec<String>,
    pub feature: String,
    pub metric: Metric,
    /// In [`TriangleIndex`] order.
    pub scores: Vec<f64>,
    pub maxima: Vec<bool>,
    pub aligned: Vec<bool>,
}

impl TriangleView {
    pub fn new(instance: &Instance, g: &Feature, table: &CooccurrenceTable, config: &AlignConfig, metric: Metric) -> Self {
        let index = TriangleIndex::new(instance.tokens.len());
        let scores = score_fragments(&instance.tokens, g, table, metric);
        let maxima = maxima(&scores, index, config.neighbourhood);
        let mut aligned = vec![false; index.len()];
        for span in align_feature(instance, g, table, config) {
            aligned[index.index(span)] = true;
        }
        TriangleView {
            tokens: instance.tokens.iter().map(|t| t.as_str().to_string()).collect(),
            feature: g.to_string(),
            metric,
            scores,
            maxima,
            aligned,
        }
    }

    fn index(&self) -> TriangleIndex {
        TriangleIndex::new(self.tokens.len())
    }

    fn text(&self, span: Span) -> String {
        self.tokens[span.start..span.end].join(" ")
    }
}

fn metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::Express => "express",
        Metric::Core => "core",
        Metric::Weight => "weight",
    }
}

/// One line per row, longest fragments first: `len | frag:0.333* | ...`.
/// `*` marks a maximum, `^` an aligned fragment.
pub fn render_text(view: &TriangleView) -> String {
    let index = view.index();
    let mut out = format!("# {} {} over \"{}\"\n", metric_name(view.metric), view.feature, view.tokens.join(" "));
    for len in (1..=index.tokens()).rev() {
        let _ = write!(out, "{len:>3}");
        for span in index.row(len) {
            let i = index.index(span);
            let _ = write!(out, " | {}:{:.3}", view.text(span), view.scores[i]);
            if view.maxima[i] {
                out.push('*');
            }
            if view.aligned[i] {
                out.push('^');
            }
        }
        out.push('\n');
    }
    out
}

const CELL_W: usize = 96;
const CELL_H: usize = 36;
const MARGIN: usize = 10;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// White for 0 through dark blue for 1; values outside `[0, 1]` are clamped.
fn shade(value: f64) -> String {
    let v = value.clamp(0.0, 1.0);
    let channel = |from: f64, to: f64| (from + (to - from) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", channel(255.0, 33.0), channel(255.0, 102.0), channel(255.0, 172.0))
}

/// Standalone SVG 1.1 using only `rect`, `text` and `title` elements.
pub fn render_svg(view: &TriangleView) -> String {
    let index = view.index();
    let n = index.tokens();
    let width = n * CELL_W + 2 * MARGIN;
    let height = (n + 1) * CELL_H + 2 * MARGIN + CELL_H / 2;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="13">{} {}</text>"#,
        MARGIN + 12,
        metric_name(view.metric),
        escape(&view.feature)
    );
    let top = MARGIN + CELL_H / 2;
    for len in (1..=n).rev() {
        let y = top + (n - len) * CELL_H;
        for span in index.row(len) {
            let i = index.index(span);
            let x = MARGIN + span.start * CELL_W + (len - 1) * CELL_W / 2;
            let value = view.scores[i];
            let (stroke, stroke_width) = match (view.maxima[i], view.aligned[i]) {
                (true, true) => ("#d62728", 4),
                (true, false) => ("#d62728", 2),
                (false, true) => ("#222222", 4),
                (false, false) => ("#999999", 1),
            };
            let text_colour = if value > 0.55 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{x}" y="{y}" width="{}" height="{}" fill="{}" stroke="{stroke}" stroke-width="{stroke_width}"><title>{} = {value:.6}{}{}</title></rect>"#,
                CELL_W - 4,
                CELL_H - 4,
                shade(value),
                escape(&view.text(span)),
                if view.maxima[i] { " (maximum)" } else { "" },
                if view.aligned[i] { " (aligned)" } else { "" },
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="{text_colour}">{value:.3}</text>"#,
                x + (CELL_W - 4) / 2,
                y + CELL_H / 2 + 2,
            );
        }
    }
    let y = top + n * CELL_H + 14;
    for (i, token) in view.tokens.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            MARGIN + i * CELL_W + (CELL_W - 4) / 2,
            escape(token)
        );
    }
    out.push_str("</svg>\n");
    out
}
