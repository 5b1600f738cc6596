//! Seeded synthetic pages with known ground truth.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::page::{PageRecord, TextSpan};

const WORDS: [&str; 48] = [
    "the", "model", "image", "text", "page", "layer", "expert", "token", "vision", "data", "train", "sample",
    "column", "region", "figure", "table", "results", "method", "value", "signal", "noise", "paper", "system",
    "mixture", "sparse", "dense", "visual", "answer", "query", "graph", "scale", "large", "small", "of", "and",
    "in", "a", "to", "café", "naïve", "über", "façade", "résumé", "señor", "Zürich", "δ-test", "x²", "niño",
];
const NOISE: [char; 7] = ['\u{0}', '\u{1}', '\u{7}', '\u{1b}', '\u{7f}', '\u{fffd}', '\u{e000}'];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Body lines per column.
    pub n_lines: usize,
    pub n_cols: usize,
    /// Probability that a word is extracted as two touching spans.
    pub split_prob: f64,
    /// Probability, per body line, of an extra control-character span.
    pub noise_prob: f64,
    pub title: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { n_lines: 12, n_cols: 2, split_prob: 0.0, noise_prob: 0.0, title: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Lines in reading order joined by newlines.
    pub text: String,
    /// One span per line in reading order.
    pub lines: Vec<TextSpan>,
    /// Indices of injected noise spans in the page's span list.
    pub noise: Vec<usize>,
}

struct Layout<'r> {
    rng: &'r mut ChaCha8Rng,
    split_prob: f64,
    spans: Vec<(TextSpan, bool)>,
    lines: Vec<TextSpan>,
}

impl Layout<'_> {
    /// Places `words` left-aligned at `(x0, top)` with character width `cw`.
    fn place_line(&mut self, words: &[&str], x0: f64, top: f64, cw: f64, height: f64) {
        let mut x = x0;
        for w in words {
            let n = w.chars().count();
            let x_end = x + n as f64 * cw;
            if n >= 2 && self.rng.random_bool(self.split_prob) {
                let k = self.rng.random_range(1..n);
                let cut = x + k as f64 * cw;
                let (a, b) = w.split_at(w.char_indices().nth(k).map(|(i, _)| i).unwrap_or(w.len()));
                self.spans.push((TextSpan::new(a, [x, top, cut, top + height]), false));
                self.spans.push((TextSpan::new(b, [cut, top, x_end, top + height]), false));
            } else {
                self.spans.push((TextSpan::new(*w, [x, top, x_end, top + height]), false));
            }
            x = x_end + 0.5 * cw;
        }
        let right = x - 0.5 * cw;
        self.lines.push(TextSpan::new(words.join(" "), [x0, top, right, top + height]));
    }
}

fn fill_words(rng: &mut ChaCha8Rng, max_units: f64) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut used = 0.0;
    loop {
        let w = WORDS[rng.random_range(0..WORDS.len())];
        let need = w.chars().count() as f64 + if out.is_empty() { 0.0 } else { 0.5 };
        if used + need > max_units {
            break;
        }
        used += need;
        out.push(w);
    }
    if out.is_empty() {
        out.push("a");
    }
    out
}

/// Deterministic page for `seed`. Spans come back shuffled, like the output
/// of a real extractor.
pub fn synth_page(seed: u64, params: &SynthParams) -> (PageRecord, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cw: f64 = rng.random_range(4.0..7.0);
    let height = 1.8 * cw;
    let pitch = 2.6 * cw;
    let margin = 20.0;
    let col_units = rng.random_range(30..=45) as f64;
    let col_w = col_units * cw;
    let col_gap = 5.0 * cw;
    let n_cols = params.n_cols.max(1);
    let page_w = 2.0 * margin + n_cols as f64 * col_w + (n_cols - 1) as f64 * col_gap;

    let mut body_top = margin;
    let mut title_line = None;
    let mut layout = Layout { rng: &mut rng, split_prob: params.split_prob.clamp(0.0, 1.0), spans: Vec::new(), lines: Vec::new() };
    if params.title {
        let tcw = 1.5 * cw;
        let n = layout.rng.random_range(2..=3);
        let words: Vec<&str> = (0..n).map(|_| WORDS[layout.rng.random_range(0..24)]).collect();
        layout.place_line(&words, margin, margin, tcw, 1.5 * height);
        title_line = layout.lines.pop();
        body_top += 1.5 * height + pitch;
    }
    let mut bottom: f64 = body_top;
    let mut columns = Vec::new();
    for c in 0..n_cols {
        let x0 = margin + c as f64 * (col_w + col_gap);
        let mut y = body_top;
        let start = layout.lines.len();
        for _ in 0..params.n_lines {
            let words = fill_words(layout.rng, col_units);
            layout.place_line(&words, x0, y, cw, height);
            y += pitch;
            if layout.rng.random_bool(0.2) {
                y += pitch;
            }
        }
        bottom = bottom.max(y);
        columns.push(start..layout.lines.len());
    }
    let page_h = bottom + margin;
    let n_body = layout.lines.len();
    let mut noise_spans = Vec::new();
    for _ in 0..n_body {
        if layout.rng.random_bool(params.noise_prob.clamp(0.0, 1.0)) {
            let len = layout.rng.random_range(3..=6);
            let text: String = (0..len).map(|_| NOISE[layout.rng.random_range(0..NOISE.len())]).collect();
            let x = layout.rng.random_range(0.0..page_w - 30.0);
            let y = layout.rng.random_range(0.0..page_h - 12.0);
            noise_spans.push((TextSpan::new(text, [x, y, x + 30.0, y + 12.0]), true));
        }
    }
    let Layout { spans, lines, .. } = layout;
    let mut spans = spans;
    spans.extend(noise_spans);
    spans.shuffle(&mut rng);

    let mut ordered = Vec::new();
    if let Some(t) = title_line {
        ordered.push(t);
    }
    for range in columns {
        ordered.extend(lines[range].iter().cloned());
    }
    let text = ordered.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n");
    let noise = spans.iter().enumerate().filter(|(_, (_, n))| *n).map(|(i, _)| i).collect();
    let page = PageRecord {
        page_id: format!("synth-{seed}"),
        size: [page_w, page_h],
        spans: spans.into_iter().map(|(s, _)| s).collect(),
        image: None,
    };
    (page, GroundTruth { text, lines: ordered, noise })
}
