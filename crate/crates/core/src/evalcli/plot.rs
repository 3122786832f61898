//! Static SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::evalcli::MetricSeries;
use crate::fileio::write_atomic;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y0: f64, y1: f64) {
    let (px0, px1, py0, py1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    writeln!(s, r#"<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>"#).unwrap();
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = py0 - (py0 - py1) * i as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, px0 - 6.0, y + 4.0, fmt_tick(v)).unwrap();
    }
    writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, (px0 + px1) / 2.0, H - 12.0, escape(x_label)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// One polyline per series, shared axes, legend on the right.
pub fn line_chart_svg(series: &[MetricSeries], title: &str, y_label: &str) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0 as f64));
    let (x0, x1) = y_range(xs);
    let (y0, y1) = y_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut s = header(title);
    axes(&mut s, "iteration", y_label, y0, y1);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - RIGHT - LEFT);
    let py = |y: f64| (H - BOTTOM) - (y - y0) / (y1 - y0) * (H - BOTTOM - TOP);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x as f64), py(y)))
            .collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = TOP + 16.0 * i as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - RIGHT + 12.0, W - RIGHT + 32.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 36.0, ly + 4.0, escape(&ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per label.
pub fn bar_chart_svg(labels: &[String], values: &[f64], title: &str, y_label: &str) -> String {
    let (_, hi) = y_range(values.iter().copied());
    let (y0, y1) = (0.0, if hi > 0.0 { hi } else { 1.0 });
    let mut s = header(title);
    axes(&mut s, "", y_label, y0, y1);
    let n = labels.len().max(1) as f64;
    let slot = (W - RIGHT - LEFT) / n;
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let h = if v.is_finite() { (v - y0) / (y1 - y0) * (H - BOTTOM - TOP) } else { 0.0 };
        let x = LEFT + slot * i as f64 + slot * 0.15;
        writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            H - BOTTOM - h,
            slot * 0.7,
            COLORS[i % COLORS.len()]
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - BOTTOM + 14.0, escape(l)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_line_chart(path: &Path, series: &[MetricSeries], title: &str, y_label: &str) -> Result<()> {
    write_atomic(path, line_chart_svg(series, title, y_label).as_bytes())
}

pub fn write_bar_chart(path: &Path, labels: &[String], values: &[f64], title: &str, y_label: &str) -> Result<()> {
    write_atomic(path, bar_chart_svg(labels, values, title, y_label).as_bytes())
}
