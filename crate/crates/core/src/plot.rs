//! Self-contained SVG charts. Each chart embeds its data as an XML comment
//! so the numbers survive alongside the picture.

use std::fmt::Write;

use crate::matrix::format_float;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub name: String,
    /// Missing y values break the line.
    pub points: Vec<(f64, Option<f64>)>,
}

impl Series {
    pub fn new(name: &str, xs: &[f64], ys: &[Option<f64>]) -> Self {
        Self { name: name.into(), points: xs.iter().copied().zip(ys.iter().copied()).collect() }
    }

    pub fn dense(name: &str, xs: &[f64], ys: &[f64]) -> Self {
        Self { name: name.into(), points: xs.iter().zip(ys).map(|(x, y)| (*x, Some(*y))).collect() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Keeps `--` out of XML comments.
fn comment_safe(s: &str) -> String {
    s.replace("--", "- -")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self { x: span(&mut xs.clone()), y: span(&mut ys.clone()) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN.0 + (x - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN.0 - MARGIN.1)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN.3 - (y - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN.2 - MARGIN.3)
    }
}

fn axes(out: &mut String, f: &Frame, title: &str, xl: &str, yl: &str) {
    let (l, r, t, b) = MARGIN;
    let _ = write!(
        out,
        r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        W - l - r,
        H - t - b
    );
    for i in 0..=4 {
        let fx = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 4.0;
        let fy = f.y.0 + (f.y.1 - f.y.0) * i as f64 / 4.0;
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            f.px(fx),
            H - b + 16.0,
            tick(fx)
        );
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            l - 6.0,
            f.py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        (l + W - r) / 2.0,
        H - 10.0,
        escape(xl)
    );
    let _ = write!(
        out,
        r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(yl)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = self.series.iter().flat_map(|s| s.points.iter().filter_map(|p| p.1));
        let f = Frame::fit(xs, ys);
        let mut out = String::new();
        let _ = write!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        out.push('\n');
        for s in &self.series {
            let _ = writeln!(out, "<!-- series {}", comment_safe(&s.name));
            for (x, y) in &s.points {
                let y = y.map_or_else(|| "nan".to_string(), format_float);
                let _ = writeln!(out, "{},{}", format_float(*x), y);
            }
            out.push_str("-->\n");
        }
        out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
        axes(&mut out, &f, &self.title, &self.x_label, &self.y_label);
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut d = String::new();
            let mut pen = false;
            for (x, y) in &s.points {
                match y.filter(|v| v.is_finite()) {
                    Some(y) => {
                        let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, f.px(*x), f.py(y));
                        pen = true;
                    }
                    None => pen = false,
                }
            }
            let _ = write!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
            let _ = write!(
                out,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
                W - MARGIN.1 - 150.0,
                MARGIN.2 + 16.0 + 14.0 * k as f64,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Heatmap over a regular grid; `values[i][j]` fills cell `(x_i, y_j)`, and
/// `None` cells are left blank.
pub fn heatmap(
    title: &str,
    x_edges: &[f64],
    y_edges: &[f64],
    values: &[Vec<Option<f64>>],
    labels: (&str, &str),
) -> String {
    let f = Frame::fit(x_edges.iter().copied(), y_edges.iter().copied());
    let finite = values.iter().flatten().flatten().copied();
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    out.push_str("<!-- heatmap x_lo,x_hi,y_lo,y_hi,value\n");
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    format_float(x_edges[i]),
                    format_float(x_edges[i + 1]),
                    format_float(y_edges[j]),
                    format_float(y_edges[j + 1]),
                    format_float(*v)
                );
            }
        }
    }
    out.push_str("-->\n");
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let Some(v) = v else { continue };
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let (r, g, b) = (
                (40.0 + 215.0 * t) as u8,
                (60.0 + 150.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8,
                (200.0 * (1.0 - t) + 30.0) as u8,
            );
            let (x0, x1) = (f.px(x_edges[i]), f.px(x_edges[i + 1]));
            let (y0, y1) = (f.py(y_edges[j + 1]), f.py(y_edges[j]));
            let _ = write!(
                out,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
                x1 - x0,
                y1 - y0
            );
        }
    }
    axes(&mut out, &f, title, labels.0, labels.1);
    out.push_str("</svg>\n");
    out
}
