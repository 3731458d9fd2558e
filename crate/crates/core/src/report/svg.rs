//! SVG 1.1 figures: clustered correlation heatmap and forest plot.
//!
//! Output is a pure function of the inputs; coordinates are printed with
//! fixed precision so documents compare byte for byte.

use std::fmt::Write;

use nalgebra::DMatrix;

use super::csv_io::ReportRow;

const BLUE: (f64, f64, f64) = (59.0, 76.0, 192.0);
const WHITE: (f64, f64, f64) = (247.0, 247.0, 247.0);
const RED: (f64, f64, f64) = (180.0, 4.0, 38.0);

/// Diverging color for a correlation, clamped to [-1, 1].
pub fn color(r: f64) -> String {
    let r = if r.is_nan() { 0.0 } else { r.clamp(-1.0, 1.0) };
    let (from, to, t) = if r < 0.0 { (WHITE, BLUE, -r) } else { (WHITE, RED, r) };
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(from.0, to.0),
        mix(from.1, to.1),
        mix(from.2, to.2)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

/// Heatmap of `corr` with rows and columns permuted by `order`.
/// Cell values are printed when there are at most 12 pipelines.
pub fn render_heatmap(corr: &DMatrix<f64>, order: &[usize], labels: &[String]) -> String {
    let j = order.len();
    let cell = if j <= 12 { 40.0 } else { (480.0 / j as f64).max(4.0) };
    let margin = 130.0;
    let grid = cell * j as f64;
    let legend_x = margin + grid + 30.0;
    let width = legend_x + 70.0;
    let height = (margin + grid + 20.0).max(margin + 220.0);

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(out, r#"<g id="cells">"#);
    for (row, &a) in order.iter().enumerate() {
        for (col, &b) in order.iter().enumerate() {
            let r = corr[(a, b)];
            let (x, y) = (margin + col as f64 * cell, margin + row as f64 * cell);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>{} / {}: {r:.3}</title></rect>"#,
                color(r),
                escape(&labels[a]),
                escape(&labels[b])
            );
            if j <= 12 {
                let ink = if r.abs() > 0.6 { "white" } else { "black" };
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" dominant-baseline="central" fill="{ink}">{r:.2}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0
                );
            }
        }
    }
    let _ = writeln!(out, "</g>");

    let _ = writeln!(out, r#"<g id="labels">"#);
    for (k, &a) in order.iter().enumerate() {
        let c = margin + (k as f64 + 0.5) * cell;
        let name = escape(&labels[a]);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{c:.2}" text-anchor="end" dominant-baseline="central">{name}</text>"#,
            margin - 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{c:.2}" y="{:.2}" text-anchor="start" transform="rotate(-60 {c:.2} {:.2})">{name}</text>"#,
            margin - 6.0,
            margin - 6.0
        );
    }
    let _ = writeln!(out, "</g>");

    // legend: gradient bar from +1 (top) to -1 (bottom)
    let (bar_top, bar_h) = (margin, 200.0);
    let _ = writeln!(out, r#"<g id="legend">"#);
    let _ = writeln!(
        out,
        r#"<defs><linearGradient id="scale" x1="0" y1="0" x2="0" y2="1"><stop offset="0" stop-color="{}"/><stop offset="0.5" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        color(1.0),
        color(0.0),
        color(-1.0)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{legend_x:.2}" y="{bar_top:.2}" width="16" height="{bar_h:.2}" fill="url(#scale)" stroke="black" stroke-width="0.5"/>"#
    );
    for (v, frac) in [(1.0, 0.0), (0.0, 0.5), (-1.0, 1.0)] {
        let y = bar_top + frac * bar_h;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{y:.2}" dominant-baseline="central">{v:.0}</text>"#,
            legend_x + 22.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{legend_x:.2}" y="{:.2}">r</text>"#,
        bar_top - 8.0
    );
    let _ = writeln!(out, "</g>\n</svg>");
    out
}

/// One horizontal interval of a forest plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub label: String,
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub pooled: bool,
}

/// Pipeline rows in `order` followed by every pooled row of a report table.
/// `pipelines` is the number of leading per-pipeline rows.
pub fn forest_rows(rows: &[ReportRow], pipelines: usize, order: &[usize]) -> Vec<ForestRow> {
    let make = |r: &ReportRow, pooled| ForestRow {
        label: r.pipeline.clone(),
        estimate: r.estimate,
        low: r.ci_low,
        high: r.ci_high,
        pooled,
    };
    order
        .iter()
        .map(|&k| make(&rows[k], false))
        .chain(rows[pipelines..].iter().map(|r| make(r, true)))
        .collect()
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Horizontal position of `v` in the plotting area.
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
    pub left: f64,
    pub right: f64,
}

impl Scale {
    pub fn x(&self, v: f64) -> f64 {
        self.left + (v - self.lo) / (self.hi - self.lo) * (self.right - self.left)
    }
}

/// Forest plot; pooled rows are drawn as diamonds below a separator.
/// `reference` adds a dashed vertical line.
pub fn render_forest(rows: &[ForestRow], reference: Option<f64>) -> String {
    let (label_w, plot_w, row_h, top) = (170.0, 460.0, 22.0, 30.0);
    let n_pipe = rows.iter().filter(|r| !r.pooled).count();
    let gap = if n_pipe > 0 && n_pipe < rows.len() { row_h } else { 0.0 };
    let plot_h = rows.len() as f64 * row_h + gap;
    let width = label_w + plot_w + 40.0;
    let height = top + plot_h + 50.0;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in rows
        .iter()
        .flat_map(|r| [r.low, r.high, r.estimate])
        .chain(reference)
        .filter(|v| v.is_finite())
    {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    let scale = Scale {
        lo: lo - pad,
        hi: hi + pad,
        left: label_w,
        right: label_w + plot_w,
    };
    let clip = |v: f64| v.clamp(scale.lo, scale.hi);

    let mut out = String::new();
    header(&mut out, width, height);
    let axis_y = top + plot_h + 6.0;

    let _ = writeln!(out, r#"<g id="axis">"#);
    let _ = writeln!(
        out,
        r#"<line x1="{:.3}" y1="{axis_y:.3}" x2="{:.3}" y2="{axis_y:.3}" stroke="black"/>"#,
        scale.left, scale.right
    );
    let step = nice_step(scale.hi - scale.lo);
    let mut k = (scale.lo / step).ceil() as i64;
    while (k as f64) * step <= scale.hi {
        let v = k as f64 * step;
        let x = scale.x(v);
        let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.3}" y1="{axis_y:.3}" x2="{x:.3}" y2="{:.3}" stroke="black"/><text x="{x:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            axis_y + 4.0,
            axis_y + 16.0,
            format_tick(v, step)
        );
        k += 1;
    }
    let _ = writeln!(out, "</g>");

    if let Some(r) = reference.filter(|v| v.is_finite()) {
        let x = scale.x(r);
        let _ = writeln!(
            out,
            r#"<line id="reference" x1="{x:.3}" y1="{top:.3}" x2="{x:.3}" y2="{:.3}" stroke="gray" stroke-dasharray="4 3"/>"#,
            top + plot_h
        );
    }

    let _ = writeln!(out, r#"<g id="rows">"#);
    let mut y = top + row_h / 2.0;
    for (i, r) in rows.iter().enumerate() {
        if r.pooled && i == n_pipe && gap > 0.0 {
            let sep = y - row_h / 2.0 + gap / 2.0;
            let _ = writeln!(
                out,
                r#"<line x1="0" y1="{sep:.3}" x2="{width:.0}" y2="{sep:.3}" stroke="lightgray"/>"#
            );
            y += gap;
        }
        let class = if r.pooled { "pooled" } else { "pipeline" };
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{y:.3}" text-anchor="end" dominant-baseline="central">{}</text>"#,
            label_w - 8.0,
            escape(&r.label)
        );
        let (x1, x2) = (scale.x(clip(r.low)), scale.x(clip(r.high)));
        let _ = writeln!(
            out,
            r#"<line class="{class}" x1="{x1:.3}" y1="{y:.3}" x2="{x2:.3}" y2="{y:.3}" stroke="black" stroke-width="1.5"/>"#
        );
        let xc = scale.x(clip(r.estimate));
        if r.pooled {
            let _ = writeln!(
                out,
                r#"<polygon points="{:.3},{y:.3} {xc:.3},{:.3} {:.3},{y:.3} {xc:.3},{:.3}" fill="black"/>"#,
                xc - 6.0,
                y - 6.0,
                xc + 6.0,
                y + 6.0
            );
        } else {
            let _ = writeln!(out, r#"<circle cx="{xc:.3}" cy="{y:.3}" r="3.5" fill="black"/>"#);
        }
        y += row_h;
    }
    let _ = writeln!(out, "</g>\n</svg>");
    out
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}
