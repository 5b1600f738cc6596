use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::dialog::coords::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextSpan {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    /// Extractor line id. Spans with different hints never share a line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_hint: Option<i64>,
}

impl TextSpan {
    pub fn new(text: impl Into<String>, bbox: [f64; 4]) -> Self {
        TextSpan { text: text.into(), bbox, line_hint: None }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from(self.bbox)
    }

    pub fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    pub fn char_width(&self) -> f64 {
        self.width() / self.text.chars().count().max(1) as f64
    }
}

/// One page as text spans with boxes in points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: String,
    pub size: [f64; 2],
    pub spans: Vec<TextSpan>,
    /// Rendered page image; defaults to `<page_id>.png` when records are built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl PageRecord {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.size;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::Validation(format!("page {}: bad size {w}x{h}", self.page_id)));
        }
        for (i, s) in self.spans.iter().enumerate() {
            let b = s.bbox();
            if s.text.is_empty() {
                return Err(Error::Validation(format!("page {}: span {i} has empty text", self.page_id)));
            }
            if !b.is_valid() || !b.within(w, h) {
                return Err(Error::Validation(format!("page {}: span {i} box {:?} is invalid or off-page", self.page_id, s.bbox)));
            }
        }
        Ok(())
    }

    pub fn image_path(&self) -> String {
        self.image.clone().unwrap_or_else(|| format!("{}.png", self.page_id))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UnicodeVerdict {
    Keep,
    Drop { ratio: f64, reason: String },
}

impl UnicodeVerdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, UnicodeVerdict::Keep)
    }
}

/// Assigned, printable codepoint. Tab, newline and carriage return count as
/// printable; other controls, private use, unassigned and U+FFFD do not.
pub fn is_printable(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return true;
    }
    if c == char::REPLACEMENT_CHARACTER {
        return false;
    }
    !matches!(
        get_general_category(c),
        GeneralCategory::Control | GeneralCategory::Unassigned | GeneralCategory::PrivateUse | GeneralCategory::Surrogate
    )
}

pub fn printable_ratio(text: &str) -> f64 {
    let total = text.chars().count();
    if total == 0 {
        return 0.0;
    }
    text.chars().filter(|&c| is_printable(c)).count() as f64 / total as f64
}

/// Keeps a span iff its printable ratio reaches `min_ratio`.
pub fn check_unicode(span: &TextSpan, min_ratio: f64) -> UnicodeVerdict {
    let ratio = printable_ratio(&span.text);
    if span.text.is_empty() {
        return UnicodeVerdict::Drop { ratio, reason: "empty text".into() };
    }
    if ratio < min_ratio {
        return UnicodeVerdict::Drop { ratio, reason: format!("printable ratio {ratio:.3} below {min_ratio}") };
    }
    UnicodeVerdict::Keep
}
