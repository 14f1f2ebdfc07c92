//! Merges the per-command CSVs of a run directory into one summary.
//!
//! Values are copied as text, never re-parsed and re-printed, so the summary
//! matches its sources character for character.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::classifier::MetricSummary;
use crate::error::{Error, Result};

pub const CROSSVAL_CSV: &str = "crossval_metrics.csv";
pub const HOLDOUT_CSV: &str = "classifier_metrics.csv";
pub const ACCURACY_CSV: &str = "localizer_accuracy.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const SUMMARY_TXT: &str = "report.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CURVE_SVG: &str = "accuracy_at_d.svg";

/// Header row plus data rows of a comma-separated file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, what: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{what}: empty file")))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::Data(format!(
                    "{what}: row {} has {} fields, header has {}",
                    i + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of the metric columns in the fixed metric order.
    fn metric_cells(&self, row: &[String], what: &str) -> Result<Vec<String>> {
        MetricSummary::COLUMNS
            .iter()
            .map(|c| {
                self.column(c)
                    .map(|i| row[i].clone())
                    .ok_or_else(|| Error::Data(format!("{what}: missing column {c}")))
            })
            .collect()
    }
}

fn read_table(dir: &Path, name: &str) -> Result<Option<Table>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Table::parse(&text, name).map(Some)
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub csv: PathBuf,
    pub svg: Option<PathBuf>,
    pub text: String,
}

/// Line plot of accuracy@D over tolerance D.
pub fn accuracy_svg(curve: &[(String, String)]) -> Result<String> {
    let points: Vec<(f64, f64)> = curve
        .iter()
        .map(|(d, a)| {
            let d: f64 = d
                .parse()
                .map_err(|_| Error::Data(format!("bad tolerance {d}")))?;
            let a: f64 = a
                .parse()
                .map_err(|_| Error::Data(format!("bad accuracy {a}")))?;
            Ok((d, a))
        })
        .collect::<Result<_>>()?;
    let (w, h, left, right, top, bottom) = (480.0, 320.0, 56.0, 16.0, 24.0, 48.0);
    let max_d = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let px = |d: f64| left + (w - left - right) * d / max_d;
    let py = |a: f64| top + (h - top - bottom) * (1.0 - a);
    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    let (x0, x1, y0, y1) = (px(0.0), px(max_d), py(0.0), py(1.0));
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let y = py(a);
        writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#,
            x0 - 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{a:.1}</text>"#,
            x0 - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let step = if max_d > 16.0 { 8.0 } else { 2.0 };
    let mut d = 0.0;
    while d <= max_d {
        let x = px(d);
        writeln!(
            s,
            r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#,
            y0 + 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{d}</text>"#,
            y0 + 16.0
        )
        .unwrap();
        d += step;
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">tolerance D (frames)</text>"#,
        (x0 + x1) / 2.0,
        h - 8.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">accuracy@D</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();
    let pts: Vec<String> = points
        .iter()
        .map(|&(d, a)| format!("{:.2},{:.2}", px(d), py(a)))
        .collect();
    writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        pts.join(" ")
    )
    .unwrap();
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

fn push_metric_rows(
    out: &mut String,
    csv: &mut String,
    section: &str,
    table: &Table,
    key_col: &str,
    what: &str,
) -> Result<()> {
    let key = table
        .column(key_col)
        .ok_or_else(|| Error::Data(format!("{what}: missing column {key_col}")))?;
    writeln!(
        out,
        "{:<36} {}",
        key_col,
        MetricSummary::COLUMNS.map(|c| format!("{c:>12}")).join(" ")
    )
    .unwrap();
    for row in &table.rows {
        let cells = table.metric_cells(row, what)?;
        writeln!(
            out,
            "{:<36} {}",
            row[key],
            cells
                .iter()
                .map(|c| format!("{c:>12}"))
                .collect::<Vec<_>>()
                .join(" ")
        )
        .unwrap();
        writeln!(csv, "{section},{},{}", row[key], cells.join(",")).unwrap();
    }
    Ok(())
}

/// Writes `report.txt`, `summary.csv` and (when the localizer curve exists) `accuracy_at_d.svg`.
pub fn emit_report(run_dir: &Path) -> Result<ReportFiles> {
    let crossval = read_table(run_dir, CROSSVAL_CSV)?;
    let holdout = read_table(run_dir, HOLDOUT_CSV)?;
    let curve = read_table(run_dir, ACCURACY_CSV)?;
    let ablation = read_table(run_dir, ABLATION_CSV)?;
    let names = [CROSSVAL_CSV, HOLDOUT_CSV, ACCURACY_CSV, ABLATION_CSV];
    let present = [
        crossval.is_some(),
        holdout.is_some(),
        curve.is_some(),
        ablation.is_some(),
    ];
    let missing: Vec<&str> = names
        .iter()
        .zip(present)
        .filter(|(_, p)| !p)
        .map(|(n, _)| *n)
        .collect();
    if missing.len() == names.len() {
        return Err(Error::Data(format!(
            "nothing to report in {}: missing {}",
            run_dir.display(),
            missing.join(", ")
        )));
    }

    let mut text = String::new();
    let mut csv = format!("section,name,{}\n", MetricSummary::COLUMNS.join(","));
    writeln!(text, "run directory: {}", run_dir.display()).unwrap();
    if !missing.is_empty() {
        writeln!(text, "not available: {}", missing.join(", ")).unwrap();
    }
    if let Some(t) = &crossval {
        writeln!(text, "\ncross-validation (per fold and mean)").unwrap();
        push_metric_rows(&mut text, &mut csv, "crossval", t, "fold", CROSSVAL_CSV)?;
    }
    if let Some(t) = &holdout {
        writeln!(text, "\nheld-out split").unwrap();
        push_metric_rows(&mut text, &mut csv, "holdout", t, "split", HOLDOUT_CSV)?;
    }
    if let Some(t) = &ablation {
        writeln!(text, "\nablation").unwrap();
        push_metric_rows(&mut text, &mut csv, "ablation", t, "variant", ABLATION_CSV)?;
    }
    let mut svg = None;
    if let Some(t) = &curve {
        let (d, a) = match (t.column("tolerance"), t.column("accuracy")) {
            (Some(d), Some(a)) => (d, a),
            _ => {
                return Err(Error::Data(format!(
                    "{ACCURACY_CSV}: needs tolerance and accuracy columns"
                )))
            }
        };
        writeln!(text, "\nkey-frame accuracy@D").unwrap();
        writeln!(text, "{:>9} {:>12}", "tolerance", "accuracy").unwrap();
        let points: Vec<(String, String)> = t
            .rows
            .iter()
            .map(|r| (r[d].clone(), r[a].clone()))
            .collect();
        for (d, a) in &points {
            writeln!(text, "{d:>9} {a:>12}").unwrap();
        }
        let path = run_dir.join(CURVE_SVG);
        fs::write(&path, accuracy_svg(&points)?).map_err(|e| Error::io(&path, e))?;
        svg = Some(path);
    }
    let summary = run_dir.join(SUMMARY_TXT);
    fs::write(&summary, &text).map_err(|e| Error::io(&summary, e))?;
    let csv_path = run_dir.join(SUMMARY_CSV);
    fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(ReportFiles {
        summary,
        csv: csv_path,
        svg,
        text,
    })
}
