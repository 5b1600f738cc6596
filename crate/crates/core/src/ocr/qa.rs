//! Cleaned pages → question-answer conversation records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::merge::{clean_page, detect_columns, group_lines, CleanPage, MergeParams};
use super::page::{PageRecord, TextSpan};
use crate::dialog::convert::templates;
use crate::dialog::coords::{textualize_box, BBox, DEFAULT_PRECISION};
use crate::dialog::record::{ConversationRecord, Media, Segment, Tags, Turn};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcrMode {
    FullText,
    Spotting,
    Layout,
}

impl FromStr for OcrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_text" | "full-text" => Ok(OcrMode::FullText),
            "spotting" => Ok(OcrMode::Spotting),
            "layout" => Ok(OcrMode::Layout),
            other => Err(Error::Input(format!("unknown OCR mode {other:?} (full_text, spotting, layout)"))),
        }
    }
}

impl fmt::Display for OcrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OcrMode::FullText => "full_text",
            OcrMode::Spotting => "spotting",
            OcrMode::Layout => "layout",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutClass {
    Title,
    Paragraph,
    Figure,
    Table,
    Caption,
}

impl fmt::Display for LayoutClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutClass::Title => "title",
            LayoutClass::Paragraph => "paragraph",
            LayoutClass::Figure => "figure",
            LayoutClass::Table => "table",
            LayoutClass::Caption => "caption",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutRegion {
    pub class: LayoutClass,
    pub bbox: BBox,
}

fn line_box(line: &[TextSpan]) -> BBox {
    line.iter().map(TextSpan::bbox).reduce(|a, b| a.union(&b)).expect("nonempty line")
}

fn is_caption(line: &[TextSpan]) -> bool {
    let t = line[0].text.trim_start();
    ["Figure ", "Fig. ", "Table "].iter().any(|p| t.starts_with(p))
}

fn starts_figure_caption(line: &[TextSpan]) -> bool {
    let t = line[0].text.trim_start();
    t.starts_with("Figure ") || t.starts_with("Fig. ")
}

/// Heuristic layout analysis of merged spans. Lines with tall text are
/// titles, lines opening with "Figure"/"Table" are captions, blocks whose
/// lines hold several separated cells are tables, and the empty space above a
/// figure caption is the figure.
pub fn layout_regions(spans: &[TextSpan], params: &MergeParams) -> Vec<LayoutRegion> {
    let all_heights: Vec<f64> = spans.iter().map(TextSpan::height).collect();
    if all_heights.is_empty() {
        return Vec::new();
    }
    let mut sorted = all_heights.clone();
    sorted.sort_by(f64::total_cmp);
    let med_h = sorted[sorted.len() / 2];

    let mut regions = Vec::new();
    for column in detect_columns(spans, params) {
        let lines = group_lines(column, params);
        let col_box = lines.iter().map(|l| line_box(l)).reduce(|a, b| a.union(&b)).expect("nonempty column");
        let kind = |l: &[TextSpan]| {
            if is_caption(l) {
                LayoutClass::Caption
            } else if line_box(l).y2 - line_box(l).y1 >= 1.3 * med_h {
                LayoutClass::Title
            } else if l.len() >= 2 {
                LayoutClass::Table
            } else {
                LayoutClass::Paragraph
            }
        };
        // blocks: runs of vertically close lines of the same kind
        let mut blocks: Vec<(LayoutClass, BBox, usize, bool)> = Vec::new();
        let mut prev_bottom = col_box.y1;
        for line in &lines {
            let b = line_box(line);
            let k = kind(line);
            let close = b.y1 - prev_bottom <= 0.8 * med_h;
            match blocks.last_mut() {
                Some((pk, pb, n, _)) if *pk == k && close && k != LayoutClass::Caption => {
                    *pb = pb.union(&b);
                    *n += 1;
                }
                _ => {
                    if k == LayoutClass::Caption && starts_figure_caption(line) && b.y1 - prev_bottom >= 2.0 * med_h {
                        let top = if blocks.is_empty() { col_box.y1.min(prev_bottom) } else { prev_bottom };
                        let fig = BBox::new(col_box.x1, top + 0.25 * med_h, col_box.x2, b.y1 - 0.25 * med_h);
                        blocks.push((LayoutClass::Figure, fig, 0, true));
                    }
                    blocks.push((k, b, 1, false));
                }
            }
            prev_bottom = b.y2;
        }
        for (k, b, n, _) in blocks {
            // a single multi-cell line is more likely a paragraph with a wide gap
            let class = if k == LayoutClass::Table && n < 2 { LayoutClass::Paragraph } else { k };
            regions.push(LayoutRegion { class, bbox: b });
        }
    }
    regions
}

fn clauses<'a>(items: impl Iterator<Item = (String, &'a BBox)>, w: f64, h: f64) -> Result<String> {
    let parts = items
        .map(|(label, b)| Ok(format!("{label} {};", textualize_box(b, w, h, DEFAULT_PRECISION)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join(" "))
}

/// Answer text for one mode from an already cleaned page.
pub fn answer_for(page: &PageRecord, clean: &CleanPage, mode: OcrMode, params: &MergeParams) -> Result<String> {
    let [w, h] = page.size;
    match mode {
        OcrMode::FullText => Ok(clean.text()),
        OcrMode::Spotting => {
            let boxes: Vec<(String, BBox)> = clean.spans().map(|s| (s.text.clone(), s.bbox())).collect();
            clauses(boxes.iter().map(|(t, b)| (t.clone(), b)), w, h)
        }
        OcrMode::Layout => {
            let spans: Vec<TextSpan> = clean.spans().cloned().collect();
            let regions = layout_regions(&spans, params);
            clauses(regions.iter().map(|r| (r.class.to_string(), &r.bbox)), w, h)
        }
    }
}

/// One QA record for the page, or `None` (with a warning) if nothing
/// survives cleanup.
pub fn page_to_qa(page: &PageRecord, mode: OcrMode, params: &MergeParams, source: &str) -> Result<Option<ConversationRecord>> {
    page.validate()?;
    let clean = clean_page(page, params);
    if clean.is_empty() {
        log::warn!("skipping page {}: no text after cleanup", page.page_id);
        return Ok(None);
    }
    let t = templates();
    let prompt = match mode {
        OcrMode::FullText => &t.ocr_full_text,
        OcrMode::Spotting => &t.ocr_spotting,
        OcrMode::Layout => &t.ocr_layout,
    };
    let answer = answer_for(page, &clean, mode, params)?;
    let record = ConversationRecord {
        id: format!("ocr/{mode}/{}", page.page_id),
        media: vec![Media { path: page.image_path() }],
        turns: vec![Turn::user(vec![Segment::Image { image: 0 }, Segment::text(prompt.clone())]), Turn::assistant(answer)],
        tags: Tags { domain: "ocr".into(), source: source.into() },
    };
    record.validate()?;
    Ok(Some(record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog::coords::parse_labeled_boxes;
    use crate::ocr::synth::{synth_page, SynthParams};

    #[test]
    fn full_text_matches_ground_truth() {
        let (page, gt) = synth_page(3, &SynthParams { split_prob: 0.3, noise_prob: 0.1, ..Default::default() });
        let r = page_to_qa(&page, OcrMode::FullText, &MergeParams::default(), "synth").unwrap().unwrap();
        r.validate().unwrap();
        assert_eq!(r.first_assistant_text().unwrap(), gt.text);
        assert_eq!(r.media[0].path, "synth-3.png");
    }

    #[test]
    fn spotting_round_trips_through_parser() {
        let (page, gt) = synth_page(5, &SynthParams::default());
        let r = page_to_qa(&page, OcrMode::Spotting, &MergeParams::default(), "synth").unwrap().unwrap();
        let parsed = parse_labeled_boxes(&r.first_assistant_text().unwrap());
        assert_eq!(parsed.len(), gt.lines.len());
        let [w, h] = page.size;
        for ((label, b), g) in parsed.iter().zip(&gt.lines) {
            assert_eq!(label, &g.text);
            let n = g.bbox().normalized(w, h);
            for (x, y) in b.to_array().iter().zip(n.to_array()) {
                assert!((x - y).abs() <= 0.5e-3 + 1e-12);
            }
        }
    }

    #[test]
    fn layout_classes() {
        let s = |t: &str, b: [f64; 4]| TextSpan::new(t, b);
        let page = PageRecord {
            page_id: "l".into(),
            size: [200.0, 300.0],
            spans: vec![
                s("Big Title", [10.0, 10.0, 150.0, 30.0]),
                s("body text line one", [10.0, 40.0, 190.0, 50.0]),
                s("body text line two", [10.0, 52.0, 190.0, 62.0]),
                s("Figure 1: a plot", [10.0, 140.0, 170.0, 150.0]),
                s("a", [10.0, 170.0, 20.0, 180.0]),
                s("b", [100.0, 170.0, 110.0, 180.0]),
                s("c", [10.0, 182.0, 20.0, 192.0]),
                s("d", [100.0, 182.0, 110.0, 192.0]),
            ],
            image: Some("l.png".into()),
        };
        let clean = clean_page(&page, &MergeParams::default());
        let spans: Vec<TextSpan> = clean.spans().cloned().collect();
        let regions = layout_regions(&spans, &MergeParams { column_gap: 10.0, ..Default::default() });
        let classes: Vec<LayoutClass> = regions.iter().map(|r| r.class).collect();
        assert_eq!(
            classes,
            vec![LayoutClass::Title, LayoutClass::Paragraph, LayoutClass::Figure, LayoutClass::Caption, LayoutClass::Table]
        );
        let fig = &regions[2].bbox;
        assert!(fig.y1 >= 62.0 && fig.y2 <= 140.0);
        let r = page_to_qa(&page, OcrMode::Layout, &MergeParams::default(), "t").unwrap().unwrap();
        assert!(r.first_assistant_text().unwrap().starts_with("title ["));
    }

    #[test]
    fn empty_page_is_skipped() {
        let page = PageRecord {
            page_id: "e".into(),
            size: [100.0, 100.0],
            spans: vec![TextSpan::new("\u{0}\u{1}", [0.0, 0.0, 10.0, 10.0])],
            image: None,
        };
        assert!(page_to_qa(&page, OcrMode::FullText, &MergeParams::default(), "t").unwrap().is_none());
        assert!("bogus".parse::<OcrMode>().is_err());
        assert_eq!("spotting".parse::<OcrMode>().unwrap(), OcrMode::Spotting);
    }
}
