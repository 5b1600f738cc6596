//! Task annotations → unified conversation records. Labels are textualized
//! directly into the answer; one fixed prompt template per task family.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::coords::{textualize_box, textualize_point, textualize_polygon, BBox, DEFAULT_PRECISION};
use super::record::{ConversationRecord, Media, Segment, Tags, Turn};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Deserialize)]
pub struct PromptTemplates {
    pub version: u32,
    pub detection: String,
    pub grounding: String,
    pub classification: String,
    pub pose: String,
    pub som_legend: String,
    pub som_question: String,
    pub som_followup: String,
    pub ocr_full_text: String,
    pub ocr_spotting: String,
    pub ocr_layout: String,
}

pub fn templates() -> &'static PromptTemplates {
    static T: OnceLock<PromptTemplates> = OnceLock::new();
    T.get_or_init(|| {
        serde_json::from_str(include_str!("../../templates/prompts_v1.json")).expect("bundled templates parse")
    })
}

/// An image referenced by path, with the pixel size used for coordinate normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    fn size(&self) -> (f64, f64) {
        (f64::from(self.width), f64::from(self.height))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "coords", rename_all = "lowercase")]
pub enum MarkShape {
    Point([f64; 2]),
    Box([f64; 4]),
    Polygon(Vec<[f64; 2]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub mark_id: u32,
    #[serde(flatten)]
    pub shape: MarkShape,
    /// Coarse-to-fine descriptions; fragment `i` feeds the `i`-th answer turn.
    pub caption_fragments: Vec<String>,
}

fn record(id: String, image: &ImageRef, domain: &str, source: &str, turns: Vec<Turn>) -> ConversationRecord {
    ConversationRecord {
        id,
        media: vec![Media { path: image.path.clone() }],
        turns,
        tags: Tags { domain: domain.to_string(), source: source.to_string() },
    }
}

fn image_question(text: impl Into<String>) -> Turn {
    Turn::user(vec![Segment::Image { image: 0 }, Segment::text(text)])
}

/// Detection: answers list `"label [box];"` entries sorted by `(y1, x1, label)`.
/// Returns `None` (with a warning) when there is nothing to detect.
pub fn convert_detection(image: &ImageRef, annotations: &[BoxAnnotation], source: &str) -> Result<Option<ConversationRecord>> {
    if annotations.is_empty() {
        log::warn!("skipping detection sample {}: no annotations", image.path);
        return Ok(None);
    }
    let (w, h) = image.size();
    let mut sorted: Vec<&BoxAnnotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| {
        a.bbox[1].total_cmp(&b.bbox[1]).then(a.bbox[0].total_cmp(&b.bbox[0])).then(a.label.cmp(&b.label))
    });
    let clauses = sorted
        .iter()
        .map(|a| Ok(format!("{} {};", a.label, textualize_box(&BBox::from(a.bbox), w, h, DEFAULT_PRECISION)?)))
        .collect::<Result<Vec<_>>>()?;
    let turns = vec![image_question(&templates().detection), Turn::assistant(clauses.join(" "))];
    Ok(Some(record(format!("detection/{}", image.path), image, "detection", source, turns)))
}

pub fn grounding_question(expression: &str) -> String {
    templates().grounding.replace("{expr}", expression)
}

/// Referring-expression grounding; several expressions for one image are
/// packed into one multi-turn record.
pub fn convert_grounding(image: &ImageRef, queries: &[(String, [f64; 4])], source: &str) -> Result<ConversationRecord> {
    if queries.is_empty() {
        return Err(Error::Validation("grounding sample has no expressions".into()));
    }
    let (w, h) = image.size();
    let mut turns = Vec::with_capacity(2 * queries.len());
    for (i, (expr, bbox)) in queries.iter().enumerate() {
        if expr.trim().is_empty() {
            return Err(Error::Validation(format!("empty referring expression for {}", image.path)));
        }
        let q = grounding_question(expr.trim());
        turns.push(if i == 0 { image_question(q) } else { Turn::user(vec![Segment::text(q)]) });
        turns.push(Turn::assistant(textualize_box(&BBox::from(*bbox), w, h, DEFAULT_PRECISION)?));
    }
    Ok(record(format!("grounding/{}", image.path), image, "grounding", source, turns))
}

pub fn convert_classification(image: &ImageRef, label: &str, source: &str) -> Result<ConversationRecord> {
    if label.trim().is_empty() {
        return Err(Error::Validation("empty class label".into()));
    }
    let turns = vec![image_question(&templates().classification), Turn::assistant(label)];
    Ok(record(format!("classification/{}", image.path), image, "classification", source, turns))
}

/// Keypoints become `"(name: [x,y])"` clauses in normalized coordinates.
pub fn convert_pose(image: &ImageRef, keypoints: &[Keypoint], source: &str) -> Result<ConversationRecord> {
    if keypoints.is_empty() {
        return Err(Error::Validation("pose sample has no keypoints".into()));
    }
    let (w, h) = image.size();
    let clauses = keypoints
        .iter()
        .map(|k| Ok(format!("({}: {})", k.name, textualize_point(k.x, k.y, w, h, DEFAULT_PRECISION)?)))
        .collect::<Result<Vec<_>>>()?;
    let turns = vec![image_question(&templates().pose), Turn::assistant(clauses.join(" "))];
    Ok(record(format!("pose/{}", image.path), image, "pose", source, turns))
}

pub fn convert_vqa(image: &ImageRef, question: &str, answer: &str, source: &str) -> Result<ConversationRecord> {
    if question.trim().is_empty() || answer.trim().is_empty() {
        return Err(Error::Validation("VQA sample needs a question and an answer".into()));
    }
    let turns = vec![image_question(question), Turn::assistant(answer)];
    Ok(record(format!("vqa/{}", image.path), image, "vqa", source, turns))
}

fn textualize_mark(shape: &MarkShape, w: f64, h: f64) -> Result<(&'static str, String)> {
    Ok(match shape {
        MarkShape::Point([x, y]) => ("point", textualize_point(*x, *y, w, h, DEFAULT_PRECISION)?),
        MarkShape::Box(b) => ("box", textualize_box(&BBox::from(*b), w, h, DEFAULT_PRECISION)?),
        MarkShape::Polygon(pts) => {
            let pts: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
            ("polygon", textualize_polygon(&pts, w, h, DEFAULT_PRECISION)?)
        }
    })
}

/// Set-of-mark data described in language: the user turn carries the raw,
/// unmarked image plus a textual legend of the marks; answers reference marks by id.
pub fn convert_som(image: &ImageRef, marks: &[Mark], source: &str) -> Result<ConversationRecord> {
    if marks.is_empty() {
        return Err(Error::Validation("set-of-mark sample has no marks".into()));
    }
    let mut seen = BTreeSet::new();
    for m in marks {
        if !seen.insert(m.mark_id) {
            return Err(Error::Validation(format!("duplicate mark id {}", m.mark_id)));
        }
    }
    let (w, h) = image.size();
    let t = templates();
    let legend = marks
        .iter()
        .map(|m| {
            let (kind, coords) = textualize_mark(&m.shape, w, h)?;
            Ok(format!("Mark {}: {kind} {coords};", m.mark_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let levels = marks.iter().map(|m| m.caption_fragments.len()).max().unwrap_or(0);
    if levels == 0 {
        return Err(Error::Validation("set-of-mark sample has no captions".into()));
    }
    let mut turns = Vec::new();
    for level in 0..levels {
        let question = if level == 0 {
            format!("{} {}\n{}", t.som_legend, legend.join(" "), t.som_question)
        } else {
            t.som_followup.clone()
        };
        turns.push(if level == 0 { image_question(question) } else { Turn::user(vec![Segment::text(question)]) });
        let answer = marks
            .iter()
            .filter_map(|m| m.caption_fragments.get(level).map(|c| format!("Mark {}: {}", m.mark_id, c.trim())))
            .collect::<Vec<_>>()
            .join(" ");
        turns.push(Turn::assistant(answer));
    }
    Ok(record(format!("som/{}", image.path), image, "som", source, turns))
}

/// One line of the task-annotation JSONL accepted by the `convert` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskSample {
    Detection { image: ImageRef, annotations: Vec<BoxAnnotation> },
    Grounding { image: ImageRef, expressions: Vec<GroundingQuery> },
    Classification { image: ImageRef, label: String },
    Pose { image: ImageRef, keypoints: Vec<Keypoint> },
    Vqa { image: ImageRef, question: String, answer: String },
    Som { image: ImageRef, marks: Vec<Mark> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub expression: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl TaskSample {
    /// `Ok(None)` when the sample is skipped (detection without boxes).
    pub fn convert(&self, source: &str) -> Result<Option<ConversationRecord>> {
        match self {
            TaskSample::Detection { image, annotations } => convert_detection(image, annotations, source),
            TaskSample::Grounding { image, expressions } => {
                let q: Vec<_> = expressions.iter().map(|g| (g.expression.clone(), g.bbox)).collect();
                convert_grounding(image, &q, source).map(Some)
            }
            TaskSample::Classification { image, label } => convert_classification(image, label, source).map(Some),
            TaskSample::Pose { image, keypoints } => convert_pose(image, keypoints, source).map(Some),
            TaskSample::Vqa { image, question, answer } => convert_vqa(image, question, answer, source).map(Some),
            TaskSample::Som { image, marks } => convert_som(image, marks, source).map(Some),
        }
    }
}
