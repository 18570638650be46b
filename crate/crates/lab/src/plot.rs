//! Deterministic SVG plots of metric CSVs: no timestamps, fixed canvas,
//! coordinates rounded to two decimals.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Curve,
    Histogram,
    Manifold3d,
}

/// The CSV does not have the columns a plot kind needs.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "schema mismatch: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

pub const HISTOGRAM_BINS: usize = 20;
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 56.0;
const MAX_POINTS: usize = 1_500;

const GREEN: &str = "#2ca02c";
const RED: &str = "#d62728";
const BLUE: &str = "#1f77b4";
const PALETTE: [&str; 6] = ["#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

/// Target is green, the baseline red and the two-pathway model blue;
/// anything else cycles through a fixed palette.
fn series_color(name: &str, index: usize) -> &'static str {
    let n = name.to_ascii_lowercase();
    if n.contains("target") {
        GREEN
    } else if n.contains("baseline") || n.contains("cgan") && !n.contains("rocgan") {
        RED
    } else if n.contains("ours") || n.contains("rocgan") || n.contains("twopathway") {
        BLUE
    } else {
        PALETTE[index % PALETTE.len()]
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows =
            r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn numbers(&self, col: usize) -> Result<Vec<f64>, SchemaError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[col].trim().parse::<f64>().map_err(|_| {
                    SchemaError(format!("row {} column `{}`: `{}` is not a number", i + 1, self.headers[col], r[col]))
                })
            })
            .collect()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.h
    }

    fn axes(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let (x1, y1) = (self.x0 + self.w, self.y0 + self.h);
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for (v, anchor, x) in [(self.x_range.0, "start", self.x0), (self.x_range.1, "end", x1)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="{anchor}">{}</text>"#,
                y1 + 14.0,
                tick(v)
            );
        }
        for (v, y) in [(self.y_range.0, y1), (self.y_range.1, self.y0 + 10.0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{y:.2}" font-size="11" text-anchor="end">{}</text>"#,
                self.x0 - 4.0,
                tick(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            y1 + 30.0,
            escape(x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="start">{}</text>"#,
            self.x0,
            self.y0 - 6.0,
            escape(y_label)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    svg
}

fn legend(svg: &mut String, entries: &[(String, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = WIDTH - 150.0;
        let _ = writeln!(svg, r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{y:.2}" font-size="11">{}</text>"#, x + 14.0, escape(name));
    }
}

/// Every numeric column after the first plotted against the first.
fn curve(t: &Table, title: &str) -> Result<String, SchemaError> {
    if t.headers.len() < 2 || t.rows.is_empty() {
        return Err(SchemaError("a curve needs an x column, at least one series and one row".into()));
    }
    let x = t.numbers(0)?;
    let series: Vec<(String, Vec<f64>)> =
        (1..t.headers.len()).map(|c| Ok((t.headers[c].clone(), t.numbers(c)?))).collect::<Result<_, SchemaError>>()?;
    let frame = Frame {
        x0: MARGIN,
        y0: MARGIN,
        w: WIDTH - 2.0 * MARGIN - 110.0,
        h: HEIGHT - 2.0 * MARGIN,
        x_range: bounds(x.iter().copied()),
        y_range: bounds(series.iter().flat_map(|(_, v)| v.iter().copied())),
    };
    let mut svg = open(title);
    frame.axes(&mut svg, &t.headers[0], "value");
    let mut entries = Vec::new();
    let stride = x.len().div_ceil(MAX_POINTS).max(1);
    for (i, (name, values)) in series.iter().enumerate() {
        let color = series_color(name, i);
        let points: Vec<String> = x
            .iter()
            .zip(values)
            .step_by(stride)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", frame.px(*a), frame.py(*b)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        entries.push((name.clone(), color));
    }
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// `bin_lo, bin_hi, count` rows, optionally grouped by a `series` column;
/// every series must have exactly 20 bins.
fn histogram(t: &Table, title: &str) -> Result<String, SchemaError> {
    let (Some(lo), Some(hi), Some(count)) = (t.column("bin_lo"), t.column("bin_hi"), t.column("count")) else {
        return Err(SchemaError("a histogram needs bin_lo, bin_hi and count columns".into()));
    };
    let (lo, hi, count) = (t.numbers(lo)?, t.numbers(hi)?, t.numbers(count)?);
    let series_col = t.column("series");
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, row) in t.rows.iter().enumerate() {
        let name = series_col.map(|c| row[c].clone()).unwrap_or_else(|| "count".into());
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((name, vec![i])),
        }
    }
    if groups.is_empty() {
        return Err(SchemaError("histogram has no rows".into()));
    }
    for (name, rows) in &groups {
        if rows.len() != HISTOGRAM_BINS {
            return Err(SchemaError(format!("series `{name}` has {} bins, expected {HISTOGRAM_BINS}", rows.len())));
        }
    }
    let frame = Frame {
        x0: MARGIN,
        y0: MARGIN,
        w: WIDTH - 2.0 * MARGIN - 110.0,
        h: HEIGHT - 2.0 * MARGIN,
        x_range: bounds(lo.iter().chain(&hi).copied()),
        y_range: (0.0, count.iter().copied().fold(1.0, f64::max)),
    };
    let mut svg = open(title);
    frame.axes(&mut svg, "bin", "count");
    let mut entries = Vec::new();
    for (g, (name, rows)) in groups.iter().enumerate() {
        let color = series_color(name, g);
        for &i in rows {
            let (x0, x1) = (frame.px(lo[i]), frame.px(hi[i]));
            let top = frame.py(count[i]);
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.55" stroke="{color}"/>"#,
                (x1 - x0).max(0.0),
                (frame.y0 + frame.h - top).max(0.0)
            );
        }
        entries.push((name.clone(), color));
    }
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Four panels, one per output function. Columns `x, y` and per output
/// `k` the series `target_k`, `baseline_k` and `ours_k` (any subset).
/// Outputs 0 and 2 depend on both inputs and are drawn in an oblique 3-d
/// projection; outputs 1 and 3 against `x` only.
fn manifold3d(t: &Table, title: &str) -> Result<String, SchemaError> {
    let (Some(xc), Some(yc)) = (t.column("x"), t.column("y")) else {
        return Err(SchemaError("manifold3d needs x and y columns".into()));
    };
    let (xs, ys) = (t.numbers(xc)?, t.numbers(yc)?);
    let mut svg = open(title);
    let (pw, ph) = ((WIDTH - 40.0) / 4.0, HEIGHT - 2.0 * MARGIN);
    let stride = xs.len().div_ceil(MAX_POINTS).max(1);
    let mut entries: Vec<(String, &str)> = Vec::new();
    for k in 0..4 {
        let cols: Vec<(&str, usize)> = ["target", "baseline", "ours"]
            .iter()
            .filter_map(|s| t.column(&format!("{s}_{k}")).map(|c| (*s, c)))
            .collect();
        if cols.is_empty() {
            return Err(SchemaError(format!(
                "no series for output {k} (expected target_{k}, baseline_{k} or ours_{k})"
            )));
        }
        let data: Vec<(&str, Vec<f64>)> =
            cols.iter().map(|(s, c)| Ok((*s, t.numbers(*c)?))).collect::<Result<_, SchemaError>>()?;
        let oblique = k % 2 == 0;
        let project = |x: f64, y: f64, z: f64| if oblique { (x + 0.45 * y, z + 0.35 * y) } else { (x, z) };
        let (mut us, mut vs) = (Vec::new(), Vec::new());
        for (_, zs) in &data {
            for i in 0..xs.len() {
                let (u, v) = project(xs[i], ys[i], zs[i]);
                us.push(u);
                vs.push(v);
            }
        }
        let frame = Frame {
            x0: 20.0 + k as f64 * pw + 30.0,
            y0: MARGIN,
            w: pw - 44.0,
            h: ph,
            x_range: bounds(us.into_iter()),
            y_range: bounds(vs.into_iter()),
        };
        frame.axes(&mut svg, if oblique { "x, y (oblique)" } else { "x" }, &format!("output {k}"));
        for (name, zs) in &data {
            let color = series_color(name, 0);
            let _ = writeln!(svg, r#"<g fill="{color}" fill-opacity="0.6">"#);
            for i in (0..xs.len()).step_by(stride) {
                let (u, v) = project(xs[i], ys[i], zs[i]);
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, frame.px(u), frame.py(v));
            }
            svg.push_str("</g>\n");
            if !entries.iter().any(|(n, _)| n == name) {
                entries.push((name.to_string(), color));
            }
        }
    }
    for (i, (name, color)) in entries.iter().enumerate() {
        let x = MARGIN + 110.0 * i as f64;
        let y = HEIGHT - 12.0;
        let _ = writeln!(svg, r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{y:.2}" font-size="11">{name}</text>"#, x + 14.0);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders `csv` as an SVG string. Schema problems come back as
/// [`SchemaError`] inside the `anyhow` error.
pub fn render(csv: &Path, kind: PlotKind) -> Result<String> {
    let table = Table::read(csv)?;
    let title = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = match kind {
        PlotKind::Curve => curve(&table, &title),
        PlotKind::Histogram => histogram(&table, &title),
        PlotKind::Manifold3d => manifold3d(&table, &title),
    }?;
    Ok(svg)
}

pub fn plot(csv: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let svg = render(csv, kind)?;
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn histogram_requires_twenty_bins() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("bin_lo,bin_hi,count\n");
        for i in 0..20 {
            let _ = writeln!(text, "{},{},{}", i as f64 / 20.0, (i + 1) as f64 / 20.0, i);
        }
        let good = write(dir.path(), "h.csv", &text);
        let svg = render(&good, PlotKind::Histogram).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 20 + 2);
        let short = write(dir.path(), "s.csv", "bin_lo,bin_hi,count\n0,0.5,1\n0.5,1,2\n");
        let err = render(&short, PlotKind::Histogram).unwrap_err();
        assert!(err.downcast_ref::<SchemaError>().is_some());
    }

    #[test]
    fn curve_is_deterministic_and_rejects_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "step,baseline,ours\n1,0.5,0.4\n2,0.45,0.3\n3,0.44,0.2\n");
        let a = render(&p, PlotKind::Curve).unwrap();
        assert_eq!(a, render(&p, PlotKind::Curve).unwrap());
        assert!(a.contains(RED) && a.contains(BLUE));
        let bad = write(dir.path(), "b.csv", "step,v\n1,abc\n");
        assert!(render(&bad, PlotKind::Curve).unwrap_err().downcast_ref::<SchemaError>().is_some());
    }

    #[test]
    fn manifold_has_four_panels() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("x,y");
        for k in 0..4 {
            let _ = write!(text, ",target_{k},baseline_{k},ours_{k}");
        }
        text.push('\n');
        for i in 0..10 {
            let _ = write!(text, "{},{}", i as f64 / 10.0, -(i as f64) / 10.0);
            for k in 0..12 {
                let _ = write!(text, ",{}", (i + k) as f64);
            }
            text.push('\n');
        }
        let svg = render(&write(dir.path(), "m.csv", &text), PlotKind::Manifold3d).unwrap();
        assert_eq!(svg.matches("output ").count(), 4);
        assert!(svg.contains(GREEN) && svg.contains(RED) && svg.contains(BLUE));
    }
}
