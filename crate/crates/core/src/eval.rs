//! Box IoU, referring-expression accuracy and exact-match scoring.

use serde::{Deserialize, Serialize};

use crate::dialog::coords::{parse_box, BBox};
use crate::dialog::record::{ConversationRecord, Role};
use crate::dialog::tokenize::ByteTokenizer;
use crate::error::{Error, Result};
use crate::moe::RouteOptions;
use crate::multimodal::{FeatureCache, MediaResolver, MultimodalModel};

/// IoU threshold for a correct grounding; comparison is inclusive.
pub const REC_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric_name: String,
    pub value: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<f64>>,
}

/// A generated answer keyed by record id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
}

/// Intersection over union; 0 (with a warning) if either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if !a.is_valid() || !b.is_valid() {
        log::warn!("degenerate box in IoU: {a:?} vs {b:?}");
        return 0.0;
    }
    let inter = BBox::new(a.x1.max(b.x1), a.y1.max(b.y1), a.x2.min(b.x2), a.y2.min(b.y2)).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn references(records: &[ConversationRecord], answers: &[String]) -> Result<Vec<String>> {
    if records.is_empty() {
        return Err(Error::Validation("nothing to evaluate: no records".into()));
    }
    if records.len() != answers.len() {
        return Err(Error::Validation(format!("{} records but {} answers", records.len(), answers.len())));
    }
    records
        .iter()
        .map(|r| r.first_assistant_text().ok_or_else(|| Error::Validation(format!("record {:?} has no answer", r.id))))
        .collect()
}

fn mean_result(name: &str, per_sample: Vec<f64>) -> EvalResult {
    let n = per_sample.len();
    EvalResult { metric_name: name.into(), value: per_sample.iter().sum::<f64>() / n as f64, n_samples: n, per_sample: Some(per_sample) }
}

/// Accuracy@0.5 against the box in each record's first answer. Unparseable
/// predictions count as wrong.
pub fn eval_rec(records: &[ConversationRecord], answers: &[String]) -> Result<EvalResult> {
    let refs = references(records, answers)?;
    let mut per = Vec::with_capacity(refs.len());
    for ((r, gt), pred) in records.iter().zip(&refs).zip(answers) {
        let gt = parse_box(gt).map_err(|e| Error::Validation(format!("record {:?}: reference box: {e}", r.id)))?;
        let ok = parse_box(pred).map(|p| iou(&p, &gt) >= REC_THRESHOLD).unwrap_or(false);
        per.push(if ok { 1.0 } else { 0.0 });
    }
    Ok(mean_result("rec_accuracy@0.5", per))
}

/// Case-folded, trimmed, whitespace-collapsed form used for exact match.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn eval_exact_match(records: &[ConversationRecord], answers: &[String]) -> Result<EvalResult> {
    let refs = references(records, answers)?;
    let per = refs
        .iter()
        .zip(answers)
        .map(|(gt, pred)| {
            let p = normalize_answer(pred);
            if !p.is_empty() && p == normalize_answer(gt) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(mean_result("exact_match", per))
}

/// Greedy answers for the first assistant turn of every record.
pub fn generate_answers(
    model: &MultimodalModel,
    records: &[ConversationRecord],
    resolver: &dyn MediaResolver,
    route: &RouteOptions,
    max_new: usize,
) -> Result<Vec<String>> {
    let mut cache = FeatureCache::default();
    records
        .iter()
        .map(|r| {
            let turn = r
                .turns
                .iter()
                .position(|t| t.role == Role::Assistant)
                .ok_or_else(|| Error::Validation(format!("record {:?} has no assistant turn", r.id)))?;
            let prompt = model.prepare_prompt(r, turn, &ByteTokenizer, resolver, &mut cache)?;
            model.generate(&prompt, &ByteTokenizer, route, max_new)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog::convert::{convert_grounding, convert_vqa, ImageRef};
    use crate::dialog::coords::textualize_box;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)), 0.0);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in prop::array::uniform4(0.0f64..10.0), b in prop::array::uniform4(0.0f64..10.0)) {
            let a = BBox::new(a[0].min(a[2]), a[1].min(a[3]), a[0].max(a[2]) + 0.1, a[1].max(a[3]) + 0.1);
            let b = BBox::new(b[0].min(b[2]), b[1].min(b[3]), b[0].max(b[2]) + 0.1, b[1].max(b[3]) + 0.1);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
        }
    }

    fn grounding(gt: [f64; 4]) -> ConversationRecord {
        let img = ImageRef { path: "i.png".into(), width: 100, height: 100 };
        convert_grounding(&img, &[("x".into(), gt)], "t").unwrap()
    }

    fn answer(b: [f64; 4]) -> String {
        textualize_box(&BBox::from(b), 100.0, 100.0, 3).unwrap()
    }

    #[test]
    fn rec_threshold_is_inclusive() {
        // ground truth 0..10 × 0..10; predictions at IoU 0.6, 0.4, 0.5 and garbage
        let gt = [0.0, 0.0, 10.0, 10.0];
        let recs = vec![grounding(gt); 4];
        let preds = vec![answer([0.0, 0.0, 10.0, 6.0]), answer([0.0, 0.0, 10.0, 4.0]), answer([0.0, 0.0, 10.0, 5.0]), "no box".into()];
        let r = eval_rec(&recs, &preds).unwrap();
        assert_eq!(r.per_sample.as_deref(), Some(&[1.0, 0.0, 1.0, 0.0][..]));
        assert_eq!(r.value, 0.5);
        assert_eq!(eval_rec(&recs, &vec![answer(gt); 4]).unwrap().value, 1.0);
        assert_eq!(eval_rec(&recs, &vec!["?".to_string(); 4]).unwrap().value, 0.0);
        assert!(matches!(eval_rec(&[], &[]), Err(Error::Validation(_))));
        assert!(eval_rec(&recs, &preds[..2]).is_err());
    }

    #[test]
    fn exact_match_normalization() {
        let img = ImageRef { path: "i.png".into(), width: 10, height: 10 };
        let recs = vec![convert_vqa(&img, "q?", "A Cat", "t").unwrap(); 3];
        let r = eval_exact_match(&recs, &["a cat".into(), "  a   cat ".into(), "".into()]).unwrap();
        assert_eq!(r.per_sample.as_deref(), Some(&[1.0, 1.0, 0.0][..]));
    }
}
