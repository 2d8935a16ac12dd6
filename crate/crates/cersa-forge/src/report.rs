//! Deterministic report emission: CSV fields, real formatting, and small
//! hand-rolled SVG charts.
//!
//! Reals are written with 17 significant digits (`{:.16e}`), enough for an
//! f64 round trip, so golden CSV files are byte-stable across runs.

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Fixed 17-significant-digit formatting for reals in CSV output.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Quote a CSV field when it contains a delimiter, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write a file, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

/// A single polyline series for [`svg_line_chart`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    /// Dashed horizontal reference lines are drawn as two-point series.
    pub dashed: bool,
}

/// Minimal line chart: axes, one polyline per series, legend text.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 16.0, 40.0, 48.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| ml + (x - x_min) / (x_max - x_min) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y_min) / (y_max - y_min) * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        ml,
        xml_escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
        (w - ml) / 2.0,
        h - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        h / 2.0,
        h / 2.0,
        xml_escape(y_label)
    ));
    // axis extremes
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">{:.4}</text>\n",
        h - mb + 14.0,
        x_min
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        w - mr,
        h - mb + 14.0,
        x_max
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        ml - 4.0,
        h - mb,
        y_min
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{mt}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        ml - 4.0,
        y_max
    ));

    for (idx, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"6,4\"" } else { "" };
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
            s.color,
            dash,
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            w - mr - 180.0,
            mt + 14.0 * idx as f64,
            s.color,
            xml_escape(s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Heat map over a dense grid; `values[i][j]` maps rows to y and columns to x.
/// Colors use a log-compressed scale so near-1 structure stays visible.
pub fn svg_heat_map(title: &str, values: &[Vec<f64>]) -> String {
    let rows = values.len();
    let cols = values.first().map_or(0, |r| r.len());
    let cell = (420.0 / rows.max(cols).max(1) as f64).clamp(2.0, 24.0);
    let (ml, mt) = (56.0, 48.0);
    let w = ml + cell * cols as f64 + 24.0;
    let h = mt + cell * rows as f64 + 40.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        xml_escape(title)
    ));
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            // log-compress the color scale; stored values stay raw
            let t = (1.0 - (1.0 - v.clamp(0.0, 1.0)).max(1e-6).log10() / (-6.0)).clamp(0.0, 1.0);
            let r = (255.0 * (1.0 - t)) as u8;
            let g = (64.0 + 128.0 * t) as u8;
            let b = (255.0 * t) as u8;
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({r},{g},{b})\"/>\n",
                ml + cell * j as f64,
                mt + cell * i as f64
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"11\">columns: top-j of second source; rows: top-i of first</text>\n",
        h - 16.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
