//! Deterministic SVG rendering of sweep CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// The four splitting series of a sweep, each scaled by `K`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub kerr: Vec<f64>,
    pub floquet: Vec<Option<f64>>,
    pub effective: Vec<Option<f64>>,
    pub fgr: Vec<Option<f64>>,
    pub semiclassical: Vec<Option<f64>>,
}

const COLUMNS: [&str; 5] = ["K", "dE_floquet_over_K", "dE_effective_over_K", "dE_fgr_over_K", "dE_semiclassical_over_K"];

pub fn parse_series(text: &str) -> Result<Series> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let mut pos = [0usize; 5];
    for (slot, name) in pos.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()))?;
    }
    let mut s = Series::default();
    for row in rdr.records() {
        let row = row?;
        let get = |j: usize| row.get(pos[j]).and_then(|v| v.parse::<f64>().ok());
        let Some(k) = get(0) else { continue };
        s.kerr.push(k);
        s.floquet.push(get(1));
        s.effective.push(get(2));
        s.fgr.push(get(3));
        s.semiclassical.push(get(4));
    }
    if s.kerr.is_empty() {
        return Err(CliError::EmptyCsv);
    }
    Ok(s)
}

pub fn read_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_series(&text)
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 60.0;

fn log_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.filter(|v| *v > 0.0 && v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let (a, b) = (lo.log10().floor(), hi.log10().ceil());
    Some((a, if b > a { b } else { a + 1.0 }))
}

/// Log–log plot of the splitting series against `K`.
pub fn splitting_svg(s: &Series) -> Result<String> {
    if s.kerr.is_empty() {
        return Err(CliError::EmptyCsv);
    }
    let (x0, x1) = log_range(s.kerr.iter().copied()).ok_or(CliError::EmptyCsv)?;
    let all = [&s.floquet, &s.effective, &s.fgr, &s.semiclassical];
    let (y0, y1) = log_range(all.iter().flat_map(|v| v.iter().flatten().copied())).unwrap_or((-12.0, 0.0));
    let px = |k: f64| LEFT + (k.log10() - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |v: f64| TOP + (y1 - v.log10()) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for e in (x0 as i64)..=(x1 as i64) {
        let x = px(10f64.powi(e as i32));
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{e}</text>"#, H - BOTTOM + 20.0);
    }
    let ystep = (((y1 - y0) / 8.0).ceil() as i64).max(1);
    let mut e = y0 as i64;
    while e <= y1 as i64 {
        let y = py(10f64.powi(e as i32));
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, LEFT - 8.0, y + 4.0);
        e += ystep;
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">K</text>"#, 0.5 * (LEFT + W - RIGHT), H - 15.0);
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">ΔE/K</text>"#,
        0.5 * (TOP + H - BOTTOM),
        0.5 * (TOP + H - BOTTOM)
    );

    let points = |v: &[Option<f64>]| -> Vec<(f64, f64)> {
        s.kerr.iter().zip(v).filter_map(|(&k, y)| y.filter(|y| *y > 0.0 && y.is_finite()).map(|y| (px(k), py(y)))).collect()
    };
    let polyline = |out: &mut String, pts: &[(f64, f64)], style: &str| {
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, path.join(" "));
        }
    };
    polyline(&mut out, &points(&s.floquet), r##"stroke="#1f77b4" stroke-width="2""##);
    polyline(&mut out, &points(&s.effective), r##"stroke="#555555" stroke-width="1.5" stroke-dasharray="6 4""##);
    for (x, y) in points(&s.fgr) {
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="none" stroke="#ff7f0e" stroke-width="1.5"/>"##);
    }
    for (x, y) in points(&s.semiclassical) {
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="#2ca02c"/>"##);
    }

    let legend = [
        (r##"<line x1="0" y1="0" x2="24" y2="0" stroke="#1f77b4" stroke-width="2"/>"##, "Floquet"),
        (r##"<line x1="0" y1="0" x2="24" y2="0" stroke="#555555" stroke-width="1.5" stroke-dasharray="6 4"/>"##, "effective"),
        (r##"<circle cx="12" cy="0" r="4" fill="none" stroke="#ff7f0e" stroke-width="1.5"/>"##, "rate γ₀"),
        (r##"<circle cx="12" cy="0" r="3.5" fill="#2ca02c"/>"##, "semiclassical"),
    ];
    for (i, (mark, label)) in legend.iter().enumerate() {
        let y = TOP + 18.0 + 18.0 * i as f64;
        let _ = writeln!(out, r#"<g transform="translate({:.2} {y:.2})">{mark}<text x="30" y="4">{label}</text></g>"#, LEFT + 12.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
