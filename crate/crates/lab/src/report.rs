//! CSV and SVG renderings of harness results. Floats use Rust's shortest
//! round-trip form, so equal runs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{LabError, Result};
use crate::harness::{AllocationReport, Curve, ExperimentReport};
use crate::table_io::csv_field;

pub const ROWS_HEADER: &str =
    "user,image_id,info_tokens,cap_tokens,tokens_sent,reduction_ratio,dreamsim,nima_mu,nima_mu_full,jpsq,utility";

pub fn rows_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{ROWS_HEADER}\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.user,
            csv_field(&r.image_id),
            r.info_tokens,
            r.cap_tokens,
            r.tokens_sent,
            r.reduction_ratio,
            r.d,
            r.q,
            r.q_full,
            r.jpsq,
            r.utility
        )
        .unwrap();
    }
    out
}

/// `key,value` pairs: aggregates first, then provenance.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let a = &report.aggregates;
    let p = &report.provenance;
    format!(
        "key,value\nmean_reduction_ratio,{}\nmean_q_drop,{}\ntotal_utility,{}\nseed,{}\nconfig_hash,{}\nversion,{}\n",
        a.mean_reduction, a.mean_q_drop, a.total_utility, p.seed, p.config_hash, p.version
    )
}

/// One row per (policy, state); tokens joined with `;`.
pub fn allocation_csv(report: &AllocationReport) -> String {
    let mut out = String::from("policy,state,tokens,utility\n");
    for r in &report.rows {
        let tokens: Vec<String> = r.tokens.iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.policy),
            r.state,
            tokens.join(";"),
            r.utility
        )
        .unwrap();
    }
    out
}

pub fn means_csv(report: &AllocationReport) -> String {
    let mut out = String::from("policy,mean_utility\n");
    for (name, mean) in &report.means {
        writeln!(out, "{},{mean}", csv_field(name)).unwrap();
    }
    out
}

pub fn rewards_csv(rewards: &[f64]) -> String {
    let mut out = String::from("episode,reward\n");
    for (i, r) in rewards.iter().enumerate() {
        writeln!(out, "{i},{r}").unwrap();
    }
    out
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("image_id,tokens,nima_mu\n");
    for c in curves {
        for (t, q) in &c.points {
            writeln!(out, "{},{t},{q}", csv_field(&c.image_id)).unwrap();
        }
    }
    out
}

/// Parses `x,y` columns (by header name) out of a CSV file.
pub fn read_series(text: &str, x: &str, y: &str, group: Option<&str>) -> std::result::Result<Vec<Series>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or(format!("no `{name}` column"))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let gi = group.map(col).transpose()?;
    let mut series: Vec<Series> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| format!("line {}: `{}` is not a number", k + 2, &rec[i]))
        };
        let name = gi.map_or_else(|| y.to_string(), |g| rec[g].to_string());
        let point = (num(xi)?, num(yi)?);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(point),
            None => series.push(Series {
                name,
                points: vec![point],
            }),
        }
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A plain line chart with axis ranges and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let all = series.iter().flat_map(|s| s.points.iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        (x0, x1) = (x0.min(0.0), x0.max(0.0) + 1.0);
    }
    if !(y0 < y1) {
        (y0, y1) = (y0.min(0.0), y0.max(0.0) + 1.0);
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        out,
        r#"<path d="M{m} {} L{} {} M{m} {} L{m} {m}" stroke="black" fill="none"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    )
    .unwrap();
    for (v, x, anchor) in [(x0, m, "start"), (x1, w - m, "end")] {
        writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="{anchor}">{v:.4}</text>"#,
            h - m + 16.0
        )
        .unwrap();
    }
    for (v, y) in [(y0, h - m), (y1, m)] {
        writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end">{v:.4}</text>"#, m - 4.0).unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 16.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" stroke="{color}" fill="none"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = m + 16.0 * k as f64;
        writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            w - m,
            escape(&s.name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}
