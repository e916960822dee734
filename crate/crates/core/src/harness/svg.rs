//! Static line-and-band charts from protocol CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::bias_variance::SUMMARY_COLUMNS;
use crate::harness::csv::Table;
use crate::harness::curves::{CURVE_COLUMNS, LSTD_COLUMNS};
use crate::harness::stats::{t_interval, Interval};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A named series of `(x, mean ± 95% interval)` points.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, Interval)>,
}

struct Panel {
    title: String,
    x_label: String,
    series: Vec<Series>,
}

fn has_columns(t: &Table, cols: &[&str]) -> bool {
    cols.iter().all(|c| t.column(c).is_some())
}

/// Mean and interval of `y` for every distinct `x`, across all rows.
fn grouped(x: &[f64], y: &[f64]) -> Vec<(f64, Interval)> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (&xi, &yi) in x.iter().zip(y) {
        groups.entry(order_key(xi)).or_insert_with(|| (xi, Vec::new())).1.push(yi);
    }
    groups.into_values().map(|(xi, ys)| (xi, t_interval(&ys, 0.95))).collect()
}

// monotone map from finite f64 to u64 so BTreeMap orders numerically
fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn bias_variance_panels(t: &Table) -> Result<Vec<Panel>> {
    let lambda = t.floats("lambda")?;
    let panel = |col: &str, title: &str| -> Result<Panel> {
        Ok(Panel {
            title: title.into(),
            x_label: "lambda".into(),
            series: vec![Series {
                label: col.into(),
                points: grouped(&lambda, &t.floats(col)?),
            }],
        })
    };
    Ok(vec![
        panel("bias_sq_mean", "squared bias")?,
        panel("variance_mean", "variance")?,
    ])
}

fn curve_panels(t: &Table, x_col: &str) -> Result<Vec<Panel>> {
    let lambda = t.floats("lambda")?;
    let step = t.floats(x_col)?;
    let ret = t.floats("return")?;
    let mut by_lambda: BTreeMap<u64, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..lambda.len() {
        let e = by_lambda
            .entry(order_key(lambda[i]))
            .or_insert_with(|| (lambda[i], Vec::new(), Vec::new()));
        e.1.push(step[i]);
        e.2.push(ret[i]);
    }
    let series = by_lambda
        .into_values()
        .map(|(l, xs, ys)| Series {
            label: format!("lambda = {l}"),
            points: grouped(&xs, &ys),
        })
        .collect();
    Ok(vec![Panel {
        title: "return".into(),
        x_label: x_col.into(),
        series,
    }])
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, iv) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(iv.lo);
        y1 = y1.max(iv.hi);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    (x0, x1, y0, y1)
}

fn draw_panel(svg: &mut String, panel: &Panel, offset_x: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let left = offset_x + MARGIN;
    let (w, h) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| MARGIN + (1.0 - (y - y0) / (y1 - y0)) * h;
    let _ = writeln!(
        svg,
        r##"<rect x="{left:.2}" y="{MARGIN}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
        left + w / 2.0,
        MARGIN - 15.0,
        panel.title
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        left + w / 2.0,
        MARGIN + h + 35.0,
        panel.x_label
    );
    for (v, anchor, x) in [(x0, "start", left), (x1, "end", left + w)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#,
            MARGIN + h + 15.0
        );
    }
    for (v, y) in [(y0, MARGIN + h), (y1, MARGIN + 10.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" font-size="10">{v:.3e}</text>"#,
            left - 4.0
        );
    }
    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper = s.points.iter().map(|(x, iv)| format!("{:.2},{:.2}", sx(*x), sy(iv.hi)));
        let lower = s.points.iter().rev().map(|(x, iv)| format!("{:.2},{:.2}", sx(*x), sy(iv.lo)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = s
            .points
            .iter()
            .map(|(x, iv)| format!("{:.2},{:.2}", sx(*x), sy(iv.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">{}</text>"#,
            left + 5.0,
            MARGIN + 14.0 + 12.0 * k as f64,
            s.label
        );
    }
}

/// Renders a bias-variance summary (two panels against lambda) or a
/// learning-curve CSV (return against step, one band per lambda) to SVG.
/// Nothing is written when the CSV is empty or its columns are unknown.
pub fn emit_summary_svg(csv_path: impl AsRef<Path>, out_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    let table = Table::read(csv_path)?;
    if table.rows.is_empty() {
        return Err(Error::Config(format!("{}: no data rows", csv_path.display())));
    }
    let panels = if has_columns(&table, &SUMMARY_COLUMNS) {
        bias_variance_panels(&table)?
    } else if has_columns(&table, &CURVE_COLUMNS) {
        curve_panels(&table, "step")?
    } else if has_columns(&table, &LSTD_COLUMNS) {
        curve_panels(&table, "iter")?
    } else {
        return Err(Error::Config(format!(
            "{}: unrecognized columns {:?}",
            csv_path.display(),
            table.header
        )));
    };
    let width = PANEL_W * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, PANEL_W * i as f64);
    }
    svg.push_str("</svg>\n");
    let out = out_path.as_ref();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
