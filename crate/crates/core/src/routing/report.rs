//! CSV and SVG output for routing analyses.

use std::fmt::Write as _;
use std::path::Path;

use super::stats::usage_distribution;
use super::sweep::SweepPoint;
use super::trace::{RoutingTrace, Tag};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

/// One `(layer, expert, tag, fraction)` row per traced bucket and expert.
pub fn usage_rows(trace: &RoutingTrace) -> Result<Vec<(usize, usize, Tag, f64)>> {
    let mut rows = Vec::new();
    for (layer, tag) in trace.total_slots.keys() {
        for (e, f) in usage_distribution(trace, *layer, tag)?.into_iter().enumerate() {
            rows.push((*layer, e, tag.clone(), f));
        }
    }
    Ok(rows)
}

pub fn write_usage_csv(path: &Path, trace: &RoutingTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["layer", "expert", "tag", "fraction"]).map_err(csv_err)?;
    for (layer, e, tag, f) in usage_rows(trace)? {
        w.write_record([layer.to_string(), e.to_string(), tag.to_string(), f.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Raw per-run rows: `<label>,run,metric`.
pub fn write_sweep_csv(path: &Path, label: &str, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([label, "run", "metric"]).map_err(csv_err)?;
    for p in points {
        for (run, m) in p.runs.iter().enumerate() {
            w.write_record([p.value.to_string(), run.to_string(), m.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `<label>,runs,mean,variance`.
pub fn write_sweep_summary_csv(path: &Path, label: &str, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([label, "runs", "mean", "variance"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.value.to_string(), p.runs.len().to_string(), p.mean.to_string(), p.variance.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_sweep_csv`] back into points.
pub fn read_sweep_csv(path: &Path) -> Result<(String, Vec<SweepPoint>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let label = r.headers().map_err(csv_err)?.get(0).unwrap_or("value").to_string();
    let mut grouped: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
        let bad = || Error::Validation(format!("{}: row {} is malformed", path.display(), i + 2));
        let v: usize = parse(0).parse().map_err(|_| bad())?;
        let m: f64 = parse(2).parse().map_err(|_| bad())?;
        grouped.entry(v).or_default().push(m);
    }
    Ok((label, grouped.into_iter().map(|(v, runs)| SweepPoint::new(v, runs)).collect()))
}

/// Reads `layer,expert,tag,fraction` rows.
pub fn read_usage_csv(path: &Path) -> Result<Vec<(usize, usize, String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::Validation(format!("{}: row {} is malformed", path.display(), i + 2));
        let field = |j: usize| rec.get(j).ok_or_else(bad);
        out.push((
            field(0)?.parse().map_err(|_| bad())?,
            field(1)?.parse().map_err(|_| bad())?,
            field(2)?.to_string(),
            field(3)?.parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];

/// Grouped bars: one panel per layer, experts on the x axis, one bar per tag.
pub fn usage_svg(rows: &[(usize, usize, String, f64)]) -> String {
    let mut layers: Vec<usize> = rows.iter().map(|r| r.0).collect();
    layers.sort();
    layers.dedup();
    let mut tags: Vec<&str> = rows.iter().map(|r| r.2.as_str()).collect();
    tags.sort();
    tags.dedup();
    let n_experts = rows.iter().map(|r| r.1 + 1).max().unwrap_or(1);
    let (pw, ph, pad) = (320.0, 180.0, 30.0);
    let cols = layers.len().clamp(1, 4);
    let nrows = layers.len().div_ceil(cols).max(1);
    let width = cols as f64 * (pw + pad) + pad;
    let height = nrows as f64 * (ph + pad + 20.0) + pad + 20.0 * tags.len() as f64;
    let ymax = rows.iter().map(|r| r.3).fold(0.0f64, f64::max).max(1e-9);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    for (li, layer) in layers.iter().enumerate() {
        let ox = pad + (li % cols) as f64 * (pw + pad);
        let oy = pad + (li / cols) as f64 * (ph + pad + 20.0);
        let _ = writeln!(s, r#"<text x="{ox}" y="{}">layer {layer}</text>"#, oy - 6.0);
        let _ = writeln!(s, r##"<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>"##);
        let group = pw / n_experts as f64;
        let bar = group * 0.8 / tags.len().max(1) as f64;
        for r in rows.iter().filter(|r| r.0 == *layer) {
            let ti = tags.iter().position(|t| *t == r.2).unwrap_or(0);
            let h = r.3 / ymax * (ph - 4.0);
            let x = ox + r.1 as f64 * group + group * 0.1 + ti as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{}"/>"#,
                oy + ph - h,
                PALETTE[ti % PALETTE.len()]
            );
        }
        for e in 0..n_experts {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{e}</text>"#, ox + (e as f64 + 0.5) * group, oy + ph + 12.0);
        }
    }
    let ly = height - 20.0 * tags.len() as f64;
    for (ti, t) in tags.iter().enumerate() {
        let y = ly + 20.0 * ti as f64;
        let _ = writeln!(s, r#"<rect x="{pad}" y="{y}" width="12" height="12" fill="{}"/>"#, PALETTE[ti % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, pad + 18.0, y + 10.0, xml_escape(t));
    }
    s.push_str("</svg>\n");
    s
}

/// Mean metric against the swept value, with ±1 standard deviation whiskers.
pub fn sweep_svg(label: &str, points: &[SweepPoint]) -> String {
    let (w, h, pad) = (480.0, 300.0, 50.0);
    let xs: Vec<f64> = points.iter().map(|p| p.value as f64).collect();
    let lo = points.iter().map(|p| p.mean - p.variance.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean + p.variance.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let px = |x: f64| pad + (x - xmin) / xspan * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#999"/>"##, w - 2.0 * pad, h - 2.0 * pad);
    let path: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", px(p.value as f64), py(p.mean))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, path.join(" "), PALETTE[0]);
    for p in points {
        let (x, sd) = (px(p.value as f64), p.variance.sqrt());
        let _ = writeln!(s, r#"<line x1="{x:.2}" x2="{x:.2}" y1="{:.2}" y2="{:.2}" stroke="{}"/>"#, py(p.mean - sd), py(p.mean + sd), PALETTE[2]);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{}"/>"#, py(p.mean), PALETTE[0]);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, h - pad + 14.0, p.value);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, xml_escape(label));
    let _ = writeln!(s, r#"<text x="4" y="{}">{hi:.4}</text><text x="4" y="{}">{lo:.4}</text>"#, pad + 4.0, h - pad);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
