//! Minimal SVG emission: line charts, grouped bar charts and boolean grid
//! maps, plus a helper that tiles several charts into one document.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const ML: f64 = 64.0;
const MR: f64 = 16.0;
const MT: f64 = 32.0;
const MB: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed horizontal reference lines.
    pub h_lines: Vec<f64>,
}

impl LineChart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LineChart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            h_lines: Vec::new(),
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn to_svg(&self) -> String {
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .cloned()
            .unzip();
        let mut ys_all = ys;
        ys_all.extend(self.h_lines.iter().cloned());
        let fx = Axis::fit(&xs);
        let fy = Axis::fit(&ys_all);
        let mut out = open(W, H);
        frame(
            &mut out,
            &self.title,
            &self.x_label,
            &self.y_label,
            &fx,
            &fy,
        );
        for &h in &self.h_lines {
            let y = fy.map(h, H - MB, MT);
            let _ = writeln!(
                out,
                r##"<line x1="{ML:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
                W - MR
            );
        }
        for (k, s) in self.series.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            // break the polyline at non-finite samples
            let mut run = String::new();
            let flush = |run: &mut String, out: &mut String| {
                if !run.is_empty() {
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                        run.trim_end()
                    );
                    run.clear();
                }
            };
            for &(x, y) in &s.points {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(
                        run,
                        "{:.2},{:.2} ",
                        fx.map(x, ML, W - MR),
                        fy.map(y, H - MB, MT)
                    );
                } else {
                    flush(&mut run, &mut out);
                }
            }
            flush(&mut run, &mut out);
        }
        legend(&mut out, self.series.iter().map(|s| s.label.as_str()));
        out.push_str("</svg>\n");
        out
    }
}

/// Grouped bars with optional ± error whiskers.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<String>,
    /// `(label, values per group, spread per group)`.
    pub series: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let mut ys = vec![0.0];
        for (_, v, e) in &self.series {
            for (a, b) in v.iter().zip(e) {
                if a.is_finite() {
                    ys.push(a + b.max(0.0));
                    ys.push(a - b.max(0.0));
                }
            }
        }
        let fy = Axis::fit(&ys);
        let ng = self.groups.len().max(1) as f64;
        let ns = self.series.len().max(1) as f64;
        let gw = (W - ML - MR) / ng;
        let bw = gw * 0.8 / ns;
        let mut out = open(W, H);
        frame(&mut out, &self.title, "", &self.y_label, &Axis::none(), &fy);
        let y0 = fy.map(0.0, H - MB, MT);
        for (g, name) in self.groups.iter().enumerate() {
            let gx = ML + g as f64 * gw;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
                gx + gw / 2.0,
                H - MB + 16.0,
                esc(name)
            );
            for (k, (_, v, e)) in self.series.iter().enumerate() {
                let val = v.get(g).copied().unwrap_or(f64::NAN);
                if !val.is_finite() {
                    continue;
                }
                let x = gx + gw * 0.1 + k as f64 * bw;
                let y = fy.map(val, H - MB, MT);
                let colour = PALETTE[k % PALETTE.len()];
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}"/>"#,
                    y.min(y0),
                    bw * 0.9,
                    (y - y0).abs()
                );
                let spread = e.get(g).copied().unwrap_or(0.0);
                if spread > 0.0 && spread.is_finite() {
                    let xc = x + bw * 0.45;
                    let _ = writeln!(
                        out,
                        r#"<line x1="{xc:.1}" y1="{:.1}" x2="{xc:.1}" y2="{:.1}" stroke="black"/>"#,
                        fy.map(val - spread, H - MB, MT),
                        fy.map(val + spread, H - MB, MT)
                    );
                }
            }
        }
        legend(&mut out, self.series.iter().map(|s| s.0.as_str()));
        out.push_str("</svg>\n");
        out
    }
}

/// Shaded cells where `cells[row][col]` is true; rows follow `ys`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub cells: Vec<Vec<bool>>,
}

impl GridChart {
    pub fn to_svg(&self) -> String {
        let fx = Axis::fit(&self.xs);
        let fy = Axis::fit(&self.ys);
        let mut out = open(W, H);
        frame(
            &mut out,
            &self.title,
            &self.x_label,
            &self.y_label,
            &fx,
            &fy,
        );
        let half = |v: &[f64], i: usize| {
            if v.len() < 2 {
                return 0.5;
            }
            let j = if i + 1 < v.len() { i + 1 } else { i - 1 };
            (v[j] - v[i]).abs() / 2.0
        };
        for (r, row) in self.cells.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                let (x, y) = (self.xs[c], self.ys[r]);
                let (hx, hy) = (half(&self.xs, c), half(&self.ys, r));
                let x0 = fx.map(x - hx, ML, W - MR);
                let x1 = fx.map(x + hx, ML, W - MR);
                let y0 = fy.map(y + hy, H - MB, MT);
                let y1 = fy.map(y - hy, H - MB, MT);
                let _ = writeln!(
                    out,
                    r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1"/>"##,
                    x1 - x0,
                    y1 - y0
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Tile standalone SVG documents into a grid with `cols` columns.
pub fn panels(docs: &[String], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = docs.len().div_ceil(cols);
    let mut out = open(W * cols as f64, H * rows as f64);
    for (k, d) in docs.iter().enumerate() {
        let (x, y) = ((k % cols) as f64 * W, (k / cols) as f64 * H);
        // nested <svg> elements position the children
        let inner = d
            .replacen("<svg ", &format!(r#"<svg x="{x}" y="{y}" "#), 1)
            .replacen(r#"<?xml version="1.0" encoding="UTF-8"?>"#, "", 1);
        out.push_str(inner.trim());
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}

struct Axis {
    lo: f64,
    hi: f64,
    ticks: Vec<f64>,
}

impl Axis {
    fn none() -> Self {
        Axis {
            lo: 0.0,
            hi: 1.0,
            ticks: Vec::new(),
        }
    }

    fn fit(v: &[f64]) -> Self {
        let (mut lo, mut hi) = v
            .iter()
            .filter(|x| x.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        let step = nice_step((hi - lo) / 5.0);
        let lo = (lo / step).floor() * step;
        let hi = (hi / step).ceil() * step;
        let n = ((hi - lo) / step).round() as usize;
        let ticks = (0..=n).map(|k| lo + k as f64 * step).collect();
        Axis { lo, hi, ticks }
    }

    fn map(&self, v: f64, a: f64, b: f64) -> f64 {
        a + (v - self.lo) / (self.hi - self.lo) * (b - a)
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

fn frame(out: &mut String, title: &str, xl: &str, yl: &str, fx: &Axis, fy: &Axis) {
    let _ = writeln!(
        out,
        r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - ML - MR,
        H - MT - MB
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    for &t in &fx.ticks {
        let x = fx.map(t, ML, W - MR);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            H - MB,
            H - MB + 4.0,
            H - MB + 15.0,
            tick_label(t)
        );
    }
    for &t in &fy.ticks {
        let y = fy.map(t, H - MB, MT);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{ML}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            ML - 4.0,
            ML - 6.0,
            y + 3.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        ML + (W - ML - MR) / 2.0,
        H - 10.0,
        esc(xl)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        esc(yl)
    );
}

fn legend<'a>(out: &mut String, labels: impl Iterator<Item = &'a str>) {
    for (k, l) in labels.enumerate() {
        if l.is_empty() {
            continue;
        }
        let y = MT + 12.0 + 13.0 * k as f64;
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{colour}"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            W - MR - 110.0,
            y - 4.0,
            W - MR - 96.0,
            y,
            esc(l)
        );
    }
}

fn tick_label(t: f64) -> String {
    let s = format!("{:.4}", t);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
