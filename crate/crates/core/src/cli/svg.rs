//! Minimal self-contained SVG line/scatter plots.

use std::fmt::Write as _;

use super::output::{fmt_g, FIGURE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    /// Markers with vertical error bars.
    Points,
    Line,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub style: Style,
    /// `(tau, value, err)`.
    pub points: Vec<(f64, f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Plot {
    /// Long-format table with one row per point.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FIGURE_HEADER}\n");
        for s in &self.series {
            for &(x, y, e) in &s.points {
                let err = e.map(fmt_g).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{err}", s.name, fmt_g(x), fmt_g(y));
            }
        }
        out
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#7f7f7f", "#8c564b",
];

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(plot: &Plot) -> String {
    let usable = |y: f64| y.is_finite() && (!plot.log_y || y > 0.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &plot.series {
        for &(x, y, e) in &s.points {
            if x.is_finite() && usable(y) {
                xs.push(x);
                let e = e.unwrap_or(0.0);
                ys.push(y);
                if usable(y + e) {
                    ys.push(y + e);
                }
                if usable(y - e) {
                    ys.push(y - e);
                }
            }
        }
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) }
    };
    let (mut x_lo, mut x_hi) = range(&xs);
    let (mut y_lo, mut y_hi) = range(&ys);
    if x_hi <= x_lo {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let ty = |y: f64| if plot.log_y { y.log10() } else { y };
    if plot.log_y {
        y_lo = 10f64.powf(y_lo.log10().floor());
        y_hi = 10f64.powf(y_hi.log10().ceil());
        if y_hi <= y_lo {
            y_hi = y_lo * 10.0;
        }
    } else {
        let pad = 0.05 * (y_hi - y_lo).max(1e-12);
        y_lo -= pad;
        y_hi += pad;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + plot_h - (ty(y) - ty(y_lo)) / (ty(y_hi) - ty(y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&plot.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    for x in linear_ticks(x_lo, x_hi) {
        let sx = px(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{sx:.2}" y1="{b}" x2="{sx:.2}" y2="{t}" stroke="black"/><text x="{sx:.2}" y="{l}" text-anchor="middle">{}</text>"#,
            fmt_g((x * 1e9).round() / 1e9),
            b = TOP + plot_h,
            t = TOP + plot_h - 5.0,
            l = TOP + plot_h + 18.0
        );
    }
    let y_ticks: Vec<f64> = if plot.log_y {
        let (a, b) = (y_lo.log10().round() as i32, y_hi.log10().round() as i32);
        (a..=b).map(|k| 10f64.powi(k)).collect()
    } else {
        linear_ticks(y_lo, y_hi)
    };
    for y in y_ticks {
        let sy = py(y);
        let label = if plot.log_y { format!("1e{}", y.log10().round()) } else { fmt_g((y * 1e9).round() / 1e9) };
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{sy:.2}" x2="{}" y2="{sy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT + 5.0,
            LEFT - 8.0,
            sy + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        TOP + plot_h / 2.0,
        escape(&plot.y_label)
    );

    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64, Option<f64>)> = s
            .points
            .iter()
            .copied()
            .filter(|&(x, y, _)| x.is_finite() && usable(y))
            .collect();
        match s.style {
            Style::Line => {
                let path: Vec<String> = pts.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 3"/>"#,
                    path.join(" ")
                );
            }
            Style::Points => {
                for &(x, y, e) in &pts {
                    let (sx, sy) = (px(x), py(y));
                    if let Some(e) = e.filter(|e| *e > 0.0) {
                        let top = py(y + e);
                        let bottom = if usable(y - e) { py(y - e) } else { TOP + plot_h };
                        let _ = writeln!(
                            svg,
                            r#"<line x1="{sx:.2}" y1="{top:.2}" x2="{sx:.2}" y2="{bottom:.2}" stroke="{color}"/>"#
                        );
                    }
                    let _ = writeln!(svg, r#"<circle cx="{sx:.2}" cy="{sy:.2}" r="3.5" fill="{color}"/>"#);
                }
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        match s.style {
            Style::Line => {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 3"/>"#,
                    lx + 24.0
                );
            }
            Style::Points => {
                let _ = writeln!(svg, r#"<circle cx="{}" cy="{ly}" r="3.5" fill="{color}"/>"#, lx + 12.0);
            }
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}
