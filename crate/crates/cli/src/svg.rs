//! Minimal deterministic SVG charts.
//!
//! Every chart is written next to a CSV holding exactly the plotted values.

use std::fmt::Write as _;
use std::path::Path;

use pigline::artifact::{write_atomic, write_string_atomic};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f4e79", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#7f8c8d"];

/// One polyline; `None` breaks the line.
#[derive(Debug, Clone)]
pub struct Line {
    pub name: String,
    pub points: Vec<(f64, Option<f64>)>,
}

pub struct LineChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub lines: Vec<Line>,
}

/// Shrinks `points` to at most `max` by averaging consecutive runs.
pub fn decimate(points: &[(f64, Option<f64>)], max: usize) -> Vec<(f64, Option<f64>)> {
    if points.len() <= max || max == 0 {
        return points.to_vec();
    }
    let chunk = points.len().div_ceil(max);
    points
        .chunks(chunk)
        .map(|c| {
            let present: Vec<f64> = c.iter().filter_map(|p| p.1).collect();
            let y = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            (c[0].0, y)
        })
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, esc(title));
    let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y.0 + f * (y.1 - y.0);
        let py = MARGIN_T + ph * (1.0 - f);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            py + 4.0,
            tick(yv)
        );
        let xv = x.0 + f * (x.1 - x.0);
        let px = MARGIN_L + pw * f;
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN_B + 16.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        esc(y_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

impl LineChart<'_> {
    pub fn render(&self) -> String {
        let xs = self.lines.iter().flat_map(|l| l.points.iter().map(|p| p.0));
        let ys = self.lines.iter().flat_map(|l| l.points.iter().filter_map(|p| p.1));
        let (x, y) = (bounds(xs), bounds(ys));
        let mut out = String::new();
        frame(&mut out, self.title, self.x_label, self.y_label, x, y);
        let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
        let px = |v: f64| MARGIN_L + pw * (v - x.0) / (x.1 - x.0);
        let py = |v: f64| MARGIN_T + ph * (1.0 - (v - y.0) / (y.1 - y.0));
        for (i, line) in self.lines.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for &(xv, yv) in &line.points {
                match yv {
                    Some(yv) => {
                        let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(xv), py(yv));
                        pen_down = true;
                    }
                    None => pen_down = false,
                }
            }
            let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#, d.trim_end());
            let ly = MARGIN_T + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
                MARGIN_L + 8.0,
                esc(&line.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    /// CSV with one row per x value of the first line and one column per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x");
        for l in &self.lines {
            let _ = write!(out, ",{}", l.name);
        }
        out.push('\n');
        let mut xs: Vec<f64> = self.lines.iter().flat_map(|l| l.points.iter().map(|p| p.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut cursors = vec![0usize; self.lines.len()];
        for x in xs {
            let _ = write!(out, "{x}");
            for (l, c) in self.lines.iter().zip(cursors.iter_mut()) {
                out.push(',');
                while *c < l.points.len() && l.points[*c].0 < x {
                    *c += 1;
                }
                if let Some((px, Some(y))) = l.points.get(*c) {
                    if *px == x {
                        let _ = write!(out, "{y}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.svg` and `<stem>.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> pigline::Result<()> {
        write_string_atomic(dir.join(format!("{stem}.csv")), &self.to_csv())?;
        write_string_atomic(dir.join(format!("{stem}.svg")), &self.render())
    }
}

/// Grid of values in `[lo, hi]` drawn as shaded cells; rows run top to bottom.
pub struct Heatmap<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `cells[i][j]` for `xs[i]`, `ys[j]`.
    pub cells: Vec<Vec<f64>>,
    /// Path drawn over the cells, in axis units.
    pub overlay: Vec<(f64, f64)>,
}

impl Heatmap<'_> {
    pub fn render(&self) -> String {
        let x = bounds(self.xs.iter().copied());
        let y = bounds(self.ys.iter().copied());
        let mut out = String::new();
        frame(&mut out, self.title, self.x_label, self.y_label, x, y);
        let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
        let (nx, ny) = (self.xs.len().max(1) as f64, self.ys.len().max(1) as f64);
        let (cw, ch) = (pw / nx, ph / ny);
        for (i, col) in self.cells.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                // darker means stronger correlation
                let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                if shade == 255 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},{shade})"/>"#,
                    MARGIN_L + cw * i as f64,
                    MARGIN_T + ph - ch * (j as f64 + 1.0),
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        if !self.overlay.is_empty() {
            let d: Vec<String> = self
                .overlay
                .iter()
                .enumerate()
                .map(|(i, &(xv, yv))| {
                    let px = MARGIN_L + pw * (xv - x.0) / (x.1 - x.0);
                    let py = MARGIN_T + ph * (1.0 - (yv - y.0) / (y.1 - y.0));
                    format!("{}{px:.1},{py:.1}", if i == 0 { "M" } else { "L" })
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                d.join(" "),
                COLORS[1]
            );
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x");
        for y in &self.ys {
            let _ = write!(out, ",{y}");
        }
        out.push('\n');
        for (x, col) in self.xs.iter().zip(&self.cells) {
            let _ = write!(out, "{x}");
            for v in col {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.svg`, `<stem>.csv` and, with an overlay, `<stem>_overlay.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> pigline::Result<()> {
        write_string_atomic(dir.join(format!("{stem}.csv")), &self.to_csv())?;
        if !self.overlay.is_empty() {
            write_atomic(dir.join(format!("{stem}_overlay.csv")), |w| {
                writeln!(w, "x,y")?;
                for (x, y) in &self.overlay {
                    writeln!(w, "{x},{y}")?;
                }
                Ok(())
            })?;
        }
        write_string_atomic(dir.join(format!("{stem}.svg")), &self.render())
    }
}
