//! Line grouping, split merging and reading order.

use serde::{Deserialize, Serialize};

use super::page::{check_unicode, PageRecord, TextSpan, UnicodeVerdict};

/// Pipeline thresholds. Widths are multiples of the median character width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeParams {
    pub min_printable_ratio: f64,
    /// Vertical overlap, as a fraction of the shorter height, to share a line.
    pub line_overlap: f64,
    /// Gaps up to this join without a space (same-word splits).
    pub tight_gap: f64,
    /// Gaps up to this join with a space.
    pub join_gap: f64,
    /// Horizontal whitespace wider than this separates columns.
    pub column_gap: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams { min_printable_ratio: 0.95, line_overlap: 0.5, tight_gap: 0.15, join_gap: 0.6, column_gap: 3.0 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median_char_width(spans: &[TextSpan]) -> f64 {
    median(spans.iter().map(TextSpan::char_width).collect())
}

fn vertical_overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    (a[3].min(b[3]) - a[1].max(b[1])).max(0.0)
}

/// Groups spans into lines by vertical overlap. Lines come back sorted by
/// top and spans within a line by left edge.
pub fn group_lines(spans: Vec<TextSpan>, params: &MergeParams) -> Vec<Vec<TextSpan>> {
    let mut spans = spans;
    spans.sort_by(|a, b| {
        let ca = a.bbox[1] + a.bbox[3];
        let cb = b.bbox[1] + b.bbox[3];
        ca.total_cmp(&cb).then(a.bbox[0].total_cmp(&b.bbox[0]))
    });
    // (extent, hint, spans)
    let mut lines: Vec<([f64; 4], Option<i64>, Vec<TextSpan>)> = Vec::new();
    for s in spans {
        let found = lines.iter_mut().rev().find(|(ext, hint, _)| {
            let shorter = s.height().min(ext[3] - ext[1]);
            let hints_agree = match (hint, s.line_hint) {
                (Some(a), Some(b)) => *a == b,
                _ => true,
            };
            hints_agree && vertical_overlap(*ext, s.bbox) >= params.line_overlap * shorter
        });
        match found {
            Some((ext, hint, members)) => {
                *ext = [ext[0].min(s.bbox[0]), ext[1].min(s.bbox[1]), ext[2].max(s.bbox[2]), ext[3].max(s.bbox[3])];
                if hint.is_none() {
                    *hint = s.line_hint;
                }
                members.push(s);
            }
            None => lines.push((s.bbox, s.line_hint, vec![s])),
        }
    }
    let mut out: Vec<Vec<TextSpan>> = lines
        .into_iter()
        .map(|(_, _, mut m)| {
            m.sort_by(|a, b| a.bbox[0].total_cmp(&b.bbox[0]));
            m
        })
        .collect();
    out.sort_by(|a, b| {
        let top = |l: &Vec<TextSpan>| l.iter().map(|s| s.bbox[1]).fold(f64::INFINITY, f64::min);
        top(a).total_cmp(&top(b))
    });
    out
}

fn join(left: &mut TextSpan, right: &TextSpan, space: bool) {
    if space {
        left.text.push(' ');
    }
    left.text.push_str(&right.text);
    left.bbox = left.bbox().union(&right.bbox()).to_array();
}

/// Merges horizontally adjacent spans of each line. Zero-width gaps join
/// directly, a trailing hyphen joins directly, other small gaps join with a
/// single space. Never drops text.
pub fn merge_splits(spans: Vec<TextSpan>, params: &MergeParams) -> Vec<TextSpan> {
    let mut out = Vec::new();
    for line in group_lines(spans, params) {
        let cw = median_char_width(&line);
        let mut iter = line.into_iter();
        let Some(mut cur) = iter.next() else { continue };
        for s in iter {
            let gap = s.bbox[0] - cur.bbox[2];
            if gap <= params.tight_gap * cw {
                join(&mut cur, &s, false);
            } else if gap <= params.join_gap * cw {
                let space = !cur.text.ends_with('-');
                join(&mut cur, &s, space);
            } else {
                out.push(std::mem::replace(&mut cur, s));
            }
        }
        out.push(cur);
    }
    out
}

/// Splits spans into columns at vertical whitespace strips wider than
/// `column_gap` median character widths, left to right.
pub fn detect_columns(spans: &[TextSpan], params: &MergeParams) -> Vec<Vec<TextSpan>> {
    if spans.is_empty() {
        return Vec::new();
    }
    let min_gap = params.column_gap * median_char_width(spans);
    let mut order: Vec<&TextSpan> = spans.iter().collect();
    order.sort_by(|a, b| a.bbox[0].total_cmp(&b.bbox[0]));
    let mut columns: Vec<(f64, Vec<TextSpan>)> = Vec::new();
    for s in order {
        match columns.last_mut() {
            Some((right, members)) if s.bbox[0] - *right <= min_gap => {
                *right = right.max(s.bbox[2]);
                members.push(s.clone());
            }
            _ => columns.push((s.bbox[2], vec![s.clone()])),
        }
    }
    columns.into_iter().map(|(_, m)| m).collect()
}

/// Column-major order; within a column lines by top, spans by left.
pub fn reading_order(spans: &[TextSpan], params: &MergeParams) -> Vec<Vec<TextSpan>> {
    detect_columns(spans, params).into_iter().flat_map(|col| group_lines(col, params)).collect()
}

/// Result of running the cleanup pipeline on one page.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPage {
    /// Ordered lines of merged spans.
    pub lines: Vec<Vec<TextSpan>>,
    /// Indices into the input spans that failed the Unicode check.
    pub dropped: Vec<usize>,
}

impl CleanPage {
    /// Lines joined by newlines, spans within a line by single spaces.
    pub fn text(&self) -> String {
        self.lines
            .iter()
            .map(|l| l.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn spans(&self) -> impl Iterator<Item = &TextSpan> {
        self.lines.iter().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Unicode filtering, split merging and reading order.
pub fn clean_page(page: &PageRecord, params: &MergeParams) -> CleanPage {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, s) in page.spans.iter().enumerate() {
        match check_unicode(s, params.min_printable_ratio) {
            UnicodeVerdict::Keep => kept.push(s.clone()),
            UnicodeVerdict::Drop { reason, .. } => {
                log::debug!("page {}: dropping span {i}: {reason}", page.page_id);
                dropped.push(i);
            }
        }
    }
    let merged = merge_splits(kept, params);
    CleanPage { lines: reading_order(&merged, params), dropped }
}
