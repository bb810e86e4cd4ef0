//! Minimal SVG line charts.

use std::fmt::Write;

use super::config::ThresholdMethod;
use super::experiment::{Aggregate, ExperimentResult};
use crate::feedback::ProtocolKind;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders series as polylines with markers, axes with five ticks each and
/// a legend on the right.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#,
        LEFT + pw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{y_label}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 15.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

fn series_by(
    result: &ExperimentResult,
    x: impl Fn(&Aggregate, f64) -> f64,
    y: impl Fn(&Aggregate) -> Option<f64>,
) -> Vec<Series> {
    let mut keys: Vec<(ProtocolKind, ThresholdMethod)> = Vec::new();
    for c in &result.cells {
        if !keys.contains(&(c.protocol, c.method)) {
            keys.push((c.protocol, c.method));
        }
    }
    keys.into_iter()
        .map(|(p, m)| {
            let mut points: Vec<(f64, f64)> = result
                .cells
                .iter()
                .filter(|c| c.protocol == p && c.method == m)
                .filter_map(|c| {
                    let a = c.aggregate(result.scan_duration)?;
                    Some((x(&a, c.budget_dbm), y(&a)?))
                })
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: format!("{p} ({})", m.name()),
                points,
            }
        })
        .collect()
}

pub fn pdet_svg(result: &ExperimentResult) -> String {
    let s = series_by(result, |a, _| a.p_consumed_dbm, |a| Some(a.p_det));
    line_chart(
        "Detection probability",
        "consumed sensing power (dBm)",
        "P_det",
        &s,
    )
}

pub fn latency_svg(result: &ExperimentResult) -> String {
    let s = series_by(result, |a, _| a.p_consumed_dbm, |a| a.latency_s);
    line_chart(
        "Sensing latency",
        "consumed sensing power (dBm)",
        "latency (s)",
        &s,
    )
}

pub fn realloc_svg(result: &ExperimentResult) -> String {
    let s = series_by(result, |a, _| a.p_consumed_dbm, |a| Some(a.realloc_ratio));
    line_chart(
        "Sensing power returned to communications",
        "consumed sensing power (dBm)",
        "ratio",
        &s,
    )
}

pub fn thresholding_svg(result: &ExperimentResult) -> String {
    let s = series_by(result, |_, budget| budget, |a| Some(a.p_det));
    line_chart(
        "MAP vs optimized thresholds",
        "sensing power budget (dBm)",
        "P_det",
        &s,
    )
}
