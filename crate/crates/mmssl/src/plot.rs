//! Tidy curve CSV and a static SVG line chart.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::run::{Summary, METRICS_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub run: String,
    pub points: Vec<Point>,
}

impl Curve {
    pub fn series(&self, metric: &str) -> Vec<(usize, f64)> {
        self.points.iter().filter(|p| p.metric == metric).map(|p| (p.epoch, p.value)).collect()
    }
}

fn push_array(points: &mut Vec<Point>, epoch: usize, name: &str, v: Option<&Value>) {
    if let Some(Value::Array(items)) = v {
        for (c, x) in items.iter().enumerate() {
            if let Some(x) = x.as_f64() {
                points.push(Point { epoch, metric: format!("{name}_{c}"), value: x });
            }
        }
    }
}

/// Flattens one metrics.jsonl line into named scalars.
pub fn flatten(line: &Value) -> CliResult<Vec<Point>> {
    let epoch = line
        .get("epoch")
        .and_then(Value::as_u64)
        .ok_or_else(|| CliError::Usage("metrics line without epoch".into()))? as usize;
    let mut points = Vec::new();
    for key in ["l_cls", "l_pl", "l_con", "l_recover", "l_all", "accept_rate"] {
        if let Some(x) = line.get(key).and_then(Value::as_f64) {
            points.push(Point { epoch, metric: key.into(), value: x });
        }
    }
    push_array(&mut points, epoch, "tau", line.get("tau"));
    push_array(&mut points, epoch, "sigma_u", line.get("sigma_u"));
    if let Some(eval) = line.get("eval").filter(|e| e.is_object()) {
        if let Some(x) = eval.get("accuracy").and_then(Value::as_f64) {
            points.push(Point { epoch, metric: "accuracy".into(), value: x });
        }
        if let Some(Value::Array(classes)) = eval.get("per_class") {
            for (c, cm) in classes.iter().enumerate() {
                for key in ["precision", "recall", "f1"] {
                    if let Some(x) = cm.get(key).and_then(Value::as_f64) {
                        points.push(Point { epoch, metric: format!("{key}_{c}"), value: x });
                    }
                }
            }
        }
    }
    Ok(points)
}

pub fn read_curve(dir: &Path) -> CliResult<Curve> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value =
            serde_json::from_str(line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        points.extend(flatten(&v)?);
    }
    let run = Summary::read(dir).map(|s| s.label).unwrap_or_else(|_| {
        dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
    });
    Ok(Curve { run, points })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("run,epoch,metric,value\n");
    for c in curves {
        let run = csv_field(&c.run);
        for p in &c.points {
            writeln!(out, "{run},{},{},{}", p.epoch, p.metric, p.value).expect("string write");
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const LEGEND_W: f64 = 180.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Line chart of `metric` with one polyline per curve and a legend.
pub fn svg_chart(curves: &[Curve], metric: &str) -> String {
    let series: Vec<(String, Vec<(usize, f64)>)> = curves.iter().map(|c| (c.run.clone(), c.series(metric))).collect();
    let all = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(e, v) in all {
        x0 = x0.min(e as f64);
        x1 = x1.max(e as f64);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_W;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .expect("string write");
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).expect("string write");
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, MARGIN + plot_w / 2.0, escape(metric))
        .expect("string write");
    let (left, bottom, right, top) = (MARGIN, HEIGHT - MARGIN, MARGIN + plot_w, MARGIN);
    writeln!(
        s,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black" stroke-width="1"/>"#
    )
    .expect("string write");
    for i in 0..=4 {
        let t = f64::from(i) / 4.0;
        let yv = y0 + t * (y1 - y0);
        let y = sy(yv);
        writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 4.0,
            left - 6.0,
            y + 4.0,
            tick_label(yv)
        )
        .expect("string write");
        let xv = x0 + t * (x1 - x0);
        let x = sx(xv);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            bottom + 4.0,
            bottom + 18.0,
            tick_label(xv)
        )
        .expect("string write");
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, MARGIN + plot_w / 2.0, HEIGHT - 12.0)
        .expect("string write");
    for (i, (run, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(e, v)| format!("{:.2},{:.2}", sx(e as f64), sy(v))).collect();
        writeln!(
            s,
            r#"<polyline data-run="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            escape(run),
            coords.join(" ")
        )
        .expect("string write");
        let ly = MARGIN + 18.0 * i as f64;
        let lx = right + 16.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text class="legend" x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(run)
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}
