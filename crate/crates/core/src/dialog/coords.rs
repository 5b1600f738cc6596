//! Plain-text coordinate encoding: boxes, points and polygons normalized to
//! `[0, 1]` and written as fixed-point decimals inside square brackets. No
//! special tokens are involved, so a generated answer can be scored by
//! parsing it back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: usize = 3;

/// Axis-aligned box `(x1, y1, x2, y2)`; pixel or normalized units depending on context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn normalized(&self, width: f64, height: f64) -> BBox {
        BBox::new(self.x1 / width, self.y1 / height, self.x2 / width, self.y2 / height)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(self.x1.min(other.x1), self.y1.min(other.y1), self.x2.max(other.x2), self.y2.max(other.y2))
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

fn fixed(v: f64, precision: usize) -> String {
    let s = format!("{v:.precision$}");
    // "-0.000" can appear for tiny negative rounding noise
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// `"[x1,y1,x2,y2]"` with coordinates normalized by the image size.
pub fn textualize_box(b: &BBox, img_w: f64, img_h: f64, precision: usize) -> Result<String> {
    if !b.is_valid() || !b.within(img_w, img_h) {
        return Err(Error::Validation(format!(
            "box {:?} is degenerate or outside the {img_w}×{img_h} image",
            b.to_array()
        )));
    }
    let n = b.normalized(img_w, img_h);
    Ok(format!(
        "[{},{},{},{}]",
        fixed(n.x1, precision),
        fixed(n.y1, precision),
        fixed(n.x2, precision),
        fixed(n.y2, precision)
    ))
}

pub fn textualize_point(x: f64, y: f64, img_w: f64, img_h: f64, precision: usize) -> Result<String> {
    if !(0.0..=img_w).contains(&x) || !(0.0..=img_h).contains(&y) {
        return Err(Error::Validation(format!("point ({x}, {y}) outside the {img_w}×{img_h} image")));
    }
    Ok(format!("[{},{}]", fixed(x / img_w, precision), fixed(y / img_h, precision)))
}

/// `"[x1,y1 x2,y2 ...]"`.
pub fn textualize_polygon(points: &[(f64, f64)], img_w: f64, img_h: f64, precision: usize) -> Result<String> {
    if points.len() < 3 {
        return Err(Error::Validation(format!("polygon needs ≥ 3 vertices, got {}", points.len())));
    }
    let parts = points
        .iter()
        .map(|&(x, y)| {
            let p = textualize_point(x, y, img_w, img_h, precision)?;
            Ok(p[1..p.len() - 1].to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(format!("[{}]", parts.join(" ")))
}

/// Bracketed span starting at or after `from`: returns (open index, inner text, index after `]`).
fn next_bracket(text: &str, from: usize) -> Option<(usize, &str, usize)> {
    let open = from + text[from..].find('[')?;
    let close = open + text[open..].find(']')?;
    Some((open, &text[open + 1..close], close + 1))
}

fn parse_numbers(inner: &str, offset: usize) -> Result<Vec<f64>> {
    let mut pos = offset;
    inner
        .split(',')
        .map(|part| {
            let here = pos;
            pos += part.len() + 1;
            let v: f64 = part
                .trim()
                .parse()
                .map_err(|_| Error::Parse { pos: here, msg: format!("{:?} is not a number", part.trim()) })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { pos: here, msg: "non-finite coordinate".into() })
            }
        })
        .collect()
}

fn parse_box_at(open: usize, inner: &str) -> Result<BBox> {
    let v = parse_numbers(inner, open + 1)?;
    if v.len() != 4 {
        return Err(Error::Parse { pos: open, msg: format!("expected 4 coordinates, found {}", v.len()) });
    }
    let b = BBox::new(v[0], v[1], v[2], v[3]);
    // boxes thinner than the quantum legitimately textualize with x1 == x2
    if b.x1 > b.x2 || b.y1 > b.y2 {
        return Err(Error::Parse { pos: open, msg: format!("box {:?} violates x1 <= x2, y1 <= y2", b.to_array()) });
    }
    Ok(b)
}

/// Extracts the first well-formed bracketed 4-tuple from free text.
pub fn parse_box(text: &str) -> Result<BBox> {
    let mut first_err = None;
    let mut from = 0;
    while let Some((open, inner, next)) = next_bracket(text, from) {
        match parse_box_at(open, inner) {
            Ok(b) => return Ok(b),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
        from = next;
    }
    Err(first_err.unwrap_or(Error::Parse { pos: text.len(), msg: "no bracketed box found".into() }))
}

pub fn parse_point(text: &str) -> Result<(f64, f64)> {
    let (open, inner, _) =
        next_bracket(text, 0).ok_or(Error::Parse { pos: text.len(), msg: "no bracketed point found".into() })?;
    let v = parse_numbers(inner, open + 1)?;
    match v.as_slice() {
        [x, y] => Ok((*x, *y)),
        _ => Err(Error::Parse { pos: open, msg: format!("expected 2 coordinates, found {}", v.len()) }),
    }
}

pub fn parse_polygon(text: &str) -> Result<Vec<(f64, f64)>> {
    let (open, inner, _) =
        next_bracket(text, 0).ok_or(Error::Parse { pos: text.len(), msg: "no bracketed polygon found".into() })?;
    let pts = inner
        .split_whitespace()
        .map(|pair| {
            let v = parse_numbers(pair, open + 1)?;
            match v.as_slice() {
                [x, y] => Ok((*x, *y)),
                _ => Err(Error::Parse { pos: open, msg: format!("vertex {pair:?} is not an x,y pair") }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if pts.len() < 3 {
        return Err(Error::Parse { pos: open, msg: "polygon needs at least 3 vertices".into() });
    }
    Ok(pts)
}

/// Parses `"label [box];"` clauses. Clauses that fail to parse are skipped.
pub fn parse_labeled_boxes(text: &str) -> Vec<(String, BBox)> {
    text.split(';')
        .filter_map(|clause| {
            let open = clause.find('[')?;
            let label = clause[..open].trim().to_string();
            parse_box(&clause[open..]).ok().map(|b| (label, b))
        })
        .collect()
}

/// Parses `"(name: [x,y])"` clauses.
pub fn parse_keypoints(text: &str) -> Result<Vec<(String, (f64, f64))>> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = text[from..].find('(') {
        let open = from + rel;
        let close = open
            + text[open..].find(')').ok_or(Error::Parse { pos: open, msg: "unterminated keypoint clause".into() })?;
        let clause = &text[open + 1..close];
        let colon = clause.find(':').ok_or(Error::Parse { pos: open, msg: "keypoint clause lacks ':'".into() })?;
        let name = clause[..colon].trim().to_string();
        let point = parse_point(&clause[colon + 1..]).map_err(|e| match e {
            Error::Parse { pos, msg } => Error::Parse { pos: pos + open + colon + 2, msg },
            other => other,
        })?;
        out.push((name, point));
        from = close + 1;
    }
    Ok(out)
}
