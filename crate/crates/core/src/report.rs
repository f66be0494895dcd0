//! Summary tables and SVG charts built from `results.csv`.
//!
//! Every plotted point is also written into the SVG as a comment of the form
//! `<!-- point series="..." x="..." y="..." -->`, so charts can be checked
//! against the numbers they were drawn from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::runner::FIXED_COLUMNS;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub width: usize,
    pub depth: usize,
    pub alpha: f64,
    pub optimizer: String,
    pub seed: u64,
    pub aa: f64,
    pub af: f64,
    pub la: f64,
    pub ja: f64,
    pub curve: Vec<f64>,
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| {
        Error::Format(format!(
            "results line {line}: column {} has unparsable value {raw:?}",
            i + 1
        ))
    })
}

pub fn parse_results_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(FIXED_COLUMNS.len()).collect();
    if fixed != FIXED_COLUMNS {
        return Err(Error::Format(format!("unexpected results header {header:?}")));
    }
    let tasks = header.len() - FIXED_COLUMNS.len();
    for (k, name) in header.iter().skip(FIXED_COLUMNS.len()).enumerate() {
        if name != format!("f{}", k + 1) {
            return Err(Error::Format(format!("unexpected curve column {name:?}")));
        }
    }
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let base = FIXED_COLUMNS.len();
        rows.push(CsvRow {
            width: field(&rec, 0, line)?,
            depth: field(&rec, 1, line)?,
            alpha: field(&rec, 2, line)?,
            optimizer: field(&rec, 3, line)?,
            seed: field(&rec, 4, line)?,
            aa: field(&rec, 5, line)?,
            af: field(&rec, 6, line)?,
            la: field(&rec, 7, line)?,
            ja: field(&rec, 8, line)?,
            curve: (0..tasks)
                .map(|k| field(&rec, base + k, line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub width: usize,
    pub depth: usize,
    pub alpha: f64,
    pub optimizer: String,
    pub seeds: usize,
    pub aa: f64,
    pub af: f64,
    pub la: f64,
    pub ja: f64,
    pub curve: Vec<f64>,
}

/// Raised when forgetting does not grow with depth for some configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthFlag {
    pub width: usize,
    pub alpha: f64,
    pub optimizer: String,
    pub depths: Vec<usize>,
    pub af: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportSummary {
    pub rows: Vec<SummaryRow>,
    pub depth_flags: Vec<DepthFlag>,
}

/// Orders f64 keys for grouping; sweep values are always finite.
fn fkey(v: f64) -> u64 {
    v.to_bits()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Seed-averaged rows ordered by optimizer, alpha, depth, then width.
pub fn summarize(rows: &[CsvRow]) -> ReportSummary {
    let mut groups: BTreeMap<(String, u64, usize, usize), Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.optimizer.clone(), fkey(r.alpha), r.depth, r.width))
            .or_default()
            .push(r);
    }
    let mut summary: Vec<SummaryRow> = groups
        .into_values()
        .map(|g| {
            let tasks = g.iter().map(|r| r.curve.len()).min().unwrap_or(0);
            SummaryRow {
                width: g[0].width,
                depth: g[0].depth,
                alpha: g[0].alpha,
                optimizer: g[0].optimizer.clone(),
                seeds: g.len(),
                aa: mean(g.iter().map(|r| r.aa)),
                af: mean(g.iter().map(|r| r.af)),
                la: mean(g.iter().map(|r| r.la)),
                ja: mean(g.iter().map(|r| r.ja)),
                curve: (0..tasks).map(|k| mean(g.iter().map(|r| r.curve[k]))).collect(),
            }
        })
        .collect();
    summary.sort_by(|a, b| {
        (&a.optimizer, a.depth, a.width)
            .cmp(&(&b.optimizer, b.depth, b.width))
            .then(a.alpha.total_cmp(&b.alpha))
    });

    let mut by_depth: BTreeMap<(String, u64, usize), Vec<&SummaryRow>> = BTreeMap::new();
    for s in &summary {
        by_depth
            .entry((s.optimizer.clone(), fkey(s.alpha), s.width))
            .or_default()
            .push(s);
    }
    let depth_flags = by_depth
        .into_values()
        .filter(|g| g.len() >= 2)
        .filter_map(|mut g| {
            g.sort_by_key(|s| s.depth);
            let violated = g.windows(2).any(|w| w[1].af < w[0].af);
            violated.then(|| DepthFlag {
                width: g[0].width,
                alpha: g[0].alpha,
                optimizer: g[0].optimizer.clone(),
                depths: g.iter().map(|s| s.depth).collect(),
                af: g.iter().map(|s| s.af).collect(),
            })
        })
        .collect();
    ReportSummary {
        rows: summary,
        depth_flags,
    }
}

pub fn markdown_table(summary: &ReportSummary) -> String {
    let mut out = String::from(
        "| width | depth | alpha | optimizer | seeds | AA | AF | LA | JA |\n|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.1} | {:.1} | {:.1} | {:.1} |",
            r.width,
            r.depth,
            r.alpha,
            r.optimizer,
            r.seeds,
            100.0 * r.aa,
            100.0 * r.af,
            100.0 * r.la,
            100.0 * r.ja
        );
    }
    if summary.depth_flags.is_empty() {
        out.push_str("\nDepth trend: no violations.\n");
    }
    for f in &summary.depth_flags {
        let _ = writeln!(
            out,
            "\nFLAG depth trend violated at width {}, alpha {}, {}: AF {:?} for depths {:?}",
            f.width, f.alpha, f.optimizer, f.af, f.depths
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Plain SVG line chart. Degenerate ranges (a single x or y value) are padded
/// so the point still lands inside the plot area.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 170.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let all = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = all.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 <= 0.0 {
        let pad = if y0 == 0.0 { 0.5 } else { y0.abs() * 0.1 };
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (L + W - R) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{L}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/><line x1="{L}" y1="{T}" x2="{L}" y2="{yb}" stroke="black"/>"#,
        yb = H - B,
        xr = W - R
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            sx(fx),
            H - B + 18.0,
            tick(fx),
            L - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (L + W - R) / 2.0,
        H - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let name = escape(&s.name);
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<!-- point series="{name}" x="{x}" y="{y}" -->"#);
        }
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if path.len() > 1 {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = T + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            W - R + 12.0,
            ly,
            W - R + 26.0,
            ly + 9.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Parses the point comments back out of a chart.
pub fn parse_chart_points(svg: &str) -> Vec<(String, f64, f64)> {
    let attr = |line: &str, key: &str| -> Option<String> {
        let start = line.find(&format!(" {key}=\""))? + key.len() + 3;
        let end = start + line[start..].find('"')?;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.starts_with("<!-- point "))
        .filter_map(|l| {
            Some((
                attr(l, "series")?,
                attr(l, "x")?.parse().ok()?,
                attr(l, "y")?.parse().ok()?,
            ))
        })
        .collect()
}

fn series_name(optimizer: &str, alpha: f64, depth: Option<usize>, width: Option<usize>) -> String {
    let mut s = format!("{optimizer} a={alpha}");
    if let Some(d) = depth {
        let _ = write!(s, " d={d}");
    }
    if let Some(w) = width {
        let _ = write!(s, " W={w}");
    }
    s
}

/// Mean AF against log₂ width, one series per (optimizer, alpha, depth).
pub fn af_vs_width(summary: &ReportSummary) -> Vec<Series> {
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &summary.rows {
        map.entry(series_name(&r.optimizer, r.alpha, Some(r.depth), None))
            .or_default()
            .push(((r.width as f64).log2(), r.af));
    }
    into_series(map)
}

/// Mean AF against depth, one series per (optimizer, alpha, width).
pub fn af_vs_depth(summary: &ReportSummary) -> Vec<Series> {
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &summary.rows {
        map.entry(series_name(&r.optimizer, r.alpha, None, Some(r.width)))
            .or_default()
            .push((r.depth as f64, r.af));
    }
    into_series(map)
}

/// Mean forgetting per task index, one series per configuration.
pub fn forgetting_series(summary: &ReportSummary) -> Vec<Series> {
    summary
        .rows
        .iter()
        .map(|r| Series {
            name: series_name(&r.optimizer, r.alpha, Some(r.depth), Some(r.width)),
            points: r
                .curve
                .iter()
                .enumerate()
                .map(|(k, &f)| ((k + 1) as f64, f))
                .collect(),
        })
        .collect()
}

fn into_series(map: BTreeMap<String, Vec<(f64, f64)>>) -> Vec<Series> {
    map.into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect()
}

/// Mean drift against log₂ width from a `drift.csv`, one series per
/// (optimizer, alpha, depth, layer).
pub fn drift_series(drift_csv: &str) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_reader(drift_csv.as_bytes());
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let width: usize = field(&rec, 0, line)?;
        let depth: usize = field(&rec, 1, line)?;
        let alpha: f64 = field(&rec, 2, line)?;
        let optimizer: String = field(&rec, 3, line)?;
        let layer: usize = field(&rec, 5, line)?;
        let drift: f64 = field(&rec, 7, line)?;
        let name = format!("{} l={layer}", series_name(&optimizer, alpha, Some(depth), None));
        let e = acc.entry((name, width)).or_insert((0.0, 0));
        e.0 += drift;
        e.1 += 1;
    }
    let mut map: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((name, width), (sum, n)) in acc {
        map.entry(name)
            .or_default()
            .push(((width as f64).log2(), sum / n as f64));
    }
    Ok(into_series(map))
}

/// The `report` command: reads `results.csv` (and a sibling `drift.csv` if
/// present) and writes `summary.md`, `report.json` and the charts to `out`.
pub fn cli_report(results: &Path, out: &Path) -> Result<ReportSummary> {
    let text = fs::read_to_string(results)
        .map_err(|e| Error::io(format!("reading {}", results.display()), e))?;
    let rows = parse_results_csv(&text).map_err(|e| match e {
        Error::Csv(c) => Error::Format(format!("results csv: {c}")),
        other => other,
    })?;
    let summary = summarize(&rows);
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let write = |name: &str, body: &str| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    write("summary.md", &markdown_table(&summary))?;
    write("report.json", &serde_json::to_string_pretty(&summary)?)?;
    write(
        "af_vs_width.svg",
        &line_chart("Average forgetting vs width", "log2 width", "AF", &af_vs_width(&summary)),
    )?;
    write(
        "forgetting_curve.svg",
        &line_chart(
            "Forgetting by task index",
            "task index",
            "forgetting",
            &forgetting_series(&summary),
        ),
    )?;
    write(
        "af_vs_depth.svg",
        &line_chart("Average forgetting vs depth", "hidden layers", "AF", &af_vs_depth(&summary)),
    )?;
    let drift_path = results.with_file_name("drift.csv");
    if drift_path.is_file() {
        let drift = fs::read_to_string(&drift_path)
            .map_err(|e| Error::io(format!("reading {}", drift_path.display()), e))?;
        write(
            "drift_vs_width.svg",
            &line_chart("Relative drift vs width", "log2 width", "drift", &drift_series(&drift)?),
        )?;
    }
    Ok(summary)
}
