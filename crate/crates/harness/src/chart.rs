//! Self-contained SVG line charts from CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::output::write_atomic;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChartSpec {
    pub x: String,
    pub y: String,
    /// Column whose distinct values become separate lines.
    pub series: Option<String>,
    /// Plots `10 log10(y)`.
    pub db: bool,
    /// Logarithmic x axis.
    pub log_x: bool,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn schema(msg: impl Into<String>) -> HarnessError {
    HarnessError::SchemaMismatch(msg.into())
}

/// Groups the chosen columns into series, in order of first appearance.
/// Points that cannot be drawn (non-finite, or non-positive under a log
/// transform) are dropped.
pub fn extract_series(csv_text: &str, spec: &ChartSpec) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| schema(e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| schema(format!("missing column `{name}`")));
    let xi = column(&spec.x)?;
    let yi = column(&spec.y)?;
    let si = spec.series.as_deref().map(column).transpose()?;

    let mut series: Vec<Series> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| schema(e.to_string()))?;
        let number = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| schema(format!("row {}: `{}` is not a number", row + 1, &record[i])))
        };
        let (x, mut y) = (number(xi)?, number(yi)?);
        if spec.db {
            y = 10.0 * y.log10();
        }
        if !x.is_finite() || !y.is_finite() || (spec.log_x && x <= 0.0) {
            continue;
        }
        let name = si.map_or_else(|| spec.y.clone(), |i| record[i].to_string());
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, y)),
            None => series.push(Series { name, points: vec![(x, y)] }),
        }
    }
    if series.is_empty() {
        return Err(schema("no plottable rows"));
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(series)
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn render_svg(series: &[Series], spec: &ChartSpec) -> String {
    let tx = |x: f64| if spec.log_x { x.log10() } else { x };
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(title) = &spec.title {
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + plot_w / 2.0, escape(title));
    }
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##);
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let (gx, gy) = (LEFT + f * plot_w, TOP + plot_h - f * plot_h);
        let xv = x0 + f * (x1 - x0);
        let xv = if spec.log_x { 10f64.powf(xv) } else { xv };
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(s, r##"<line x1="{gx:.2}" y1="{TOP}" x2="{gx:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + plot_h);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#ddd"/>"##, LEFT + plot_w);
        let _ = writeln!(s, r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + plot_h + 18.0, tick_label(xv));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, gy + 4.0, tick_label(yv));
    }
    let x_label = if spec.log_x { format!("{} (log scale)", spec.x) } else { spec.x.clone() };
    let y_label = if spec.db { format!("{} [dB]", spec.y) } else { spec.y.clone() };
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + plot_w / 2.0, HEIGHT - 12.0, escape(&x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Renders `csv_path` according to `spec` and writes the SVG to `out`.
pub fn emit_chart(csv_path: &Path, spec: &ChartSpec, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| HarnessError::Io(format!("{}: {e}", csv_path.display())))?;
    let series = extract_series(&text, spec)?;
    write_atomic(out, render_svg(&series, spec).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(series: Option<&str>) -> ChartSpec {
        ChartSpec { x: "snr".into(), y: "mse".into(), series: series.map(String::from), ..ChartSpec::default() }
    }

    const CSV: &str = "method,snr,mse\nls,0,10\nlmmse,0,5\nls,10,1\nlmmse,10,0.8\n";

    #[test]
    fn two_series_two_polylines() {
        let s = extract_series(CSV, &spec(Some("method"))).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].name, "ls");
        assert_eq!(s[1].points, vec![(0.0, 5.0), (10.0, 0.8)]);
        let svg = render_svg(&s, &spec(Some("method")));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn db_option_scales_values() {
        let s = extract_series(CSV, &ChartSpec { db: true, ..spec(Some("method")) }).unwrap();
        assert_eq!(s[0].points, vec![(0.0, 10.0), (10.0, 0.0)]);
        assert!((s[1].points[1].1 - 10.0 * 0.8f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(extract_series("method,snr,mse\n", &spec(None)), Err(HarnessError::SchemaMismatch(_))));
        assert!(matches!(extract_series(CSV, &ChartSpec { y: "rate".into(), ..spec(None) }), Err(HarnessError::SchemaMismatch(_))));
        assert!(matches!(extract_series("snr,mse\n0,abc\n", &spec(None)), Err(HarnessError::SchemaMismatch(_))));
    }

    #[test]
    fn log_axis_drops_non_positive_x() {
        let s = extract_series("snr,mse\n0,1\n1,2\n100,3\n", &ChartSpec { log_x: true, ..spec(None) }).unwrap();
        assert_eq!(s[0].points.len(), 2);
        let svg = render_svg(&s, &ChartSpec { log_x: true, ..spec(None) });
        assert!(svg.contains("(log scale)"));
    }
}
