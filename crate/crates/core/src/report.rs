//! Paper-shaped outputs: results tables, cross-team heatmaps and aggregate
//! learning curves. All numbers are percentages with two decimals, and
//! nothing time- or host-dependent is written.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::LearningCurve;
use crate::catalog::TeamId;
use crate::error::{csv_err, IoContext};
use crate::metrics::{aggregate, CrossTeamMatrix, RunResult};
use crate::{Error, Result};

/// Rounds to two decimals, folding `-0.00` into `0.00`.
pub fn round2(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn fmt2(v: f64) -> String {
    format!("{:.2}", round2(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    pub val_acc: f64,
    pub test_acc: f64,
    pub vtg: f64,
}

impl Columns {
    fn rounded(self) -> Columns {
        Columns {
            val_acc: round2(self.val_acc),
            test_acc: round2(self.test_acc),
            vtg: round2(self.vtg),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub team: TeamId,
    #[serde(flatten)]
    pub values: Columns,
}

/// Per-team rows (percent) with Mean and Std footers over the unrounded
/// row values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
    pub mean: Columns,
    pub std: Columns,
}

impl ResultsTable {
    /// Rows from `(team, val %, test %)`; VTG is recomputed from the two.
    pub fn from_percent(rows: impl IntoIterator<Item = (TeamId, f64, f64)>) -> Result<Self> {
        let rows: Vec<ResultsRow> = rows
            .into_iter()
            .map(|(team, val, test)| ResultsRow {
                team,
                values: Columns {
                    val_acc: val,
                    test_acc: test,
                    vtg: crate::metrics::vtg(val, test),
                },
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::Metric("results table needs at least one run".into()));
        }
        let column = |f: fn(&Columns) -> f64| -> Result<(f64, f64)> {
            aggregate(&rows.iter().map(|r| f(&r.values)).collect::<Vec<_>>())
        };
        let (val, test, vtg) = (column(|c| c.val_acc)?, column(|c| c.test_acc)?, column(|c| c.vtg)?);
        Ok(ResultsTable {
            mean: Columns {
                val_acc: val.0,
                test_acc: test.0,
                vtg: vtg.0,
            },
            std: Columns {
                val_acc: val.1,
                test_acc: test.1,
                vtg: vtg.1,
            },
            rows,
        })
    }

    /// One row per run in the given order, pooled test accuracy.
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        Self::from_percent(
            runs.iter()
                .map(|r| (r.focal_team.clone(), 100.0 * r.val_acc, 100.0 * r.test_acc())),
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ctx = "results table";
        w.write_record(["team", "val_acc", "test_acc", "vtg"])
            .map_err(csv_err(ctx))?;
        let labeled = self
            .rows
            .iter()
            .map(|r| (r.team.as_str(), r.values))
            .chain([("Mean", self.mean), ("Std", self.std)]);
        for (label, c) in labeled {
            w.write_record([label.to_string(), fmt2(c.val_acc), fmt2(c.test_acc), fmt2(c.vtg)])
                .map_err(csv_err(ctx))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Same numbers as the CSV, rounded to two decimals.
    pub fn to_json(&self) -> String {
        let rounded = ResultsTable {
            rows: self
                .rows
                .iter()
                .map(|r| ResultsRow {
                    team: r.team.clone(),
                    values: r.values.rounded(),
                })
                .collect(),
            mean: self.mean.rounded(),
            std: self.std.rounded(),
        };
        serde_json::to_string_pretty(&rounded).expect("table serializes") + "\n"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

pub fn emit_results_table(runs: &[RunResult], path: &Path, format: TableFormat) -> Result<()> {
    let table = ResultsTable::from_runs(runs)?;
    let text = match format {
        TableFormat::Csv => table.to_csv()?,
        TableFormat::Json => table.to_json(),
    };
    std::fs::write(path, text).at(path)
}

/// Light end of the sequential scale.
pub const SCALE_LOW: [u8; 3] = [0xf7, 0xfb, 0xff];
/// Dark end of the sequential scale.
pub const SCALE_HIGH: [u8; 3] = [0x08, 0x30, 0x6b];

/// Linear interpolation between the scale endpoints, `t` clamped to `[0, 1]`.
pub fn scale_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let c: Vec<u8> = SCALE_LOW
        .iter()
        .zip(SCALE_HIGH)
        .map(|(&lo, hi)| (f64::from(lo) + t * (f64::from(hi) - f64::from(lo))).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const CELL: usize = 48;
const MARGIN: usize = 160;

/// Standalone SVG heatmap; rows are training teams, columns test teams.
pub fn matrix_svg(matrix: &CrossTeamMatrix, title: &str) -> String {
    let n = matrix.size();
    let (lo, hi) = matrix.min_max().unwrap_or((0.0, 1.0));
    let span = hi - lo;
    let side = MARGIN + n * CELL + 20;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{side}" height="{side}" viewBox="0 0 {side} {side}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(
        svg,
        r#"<desc>Rows: training teams. Columns: test teams. Diagonal: {}.</desc>"#,
        xml_escape(&matrix.diagonal_semantics)
    );
    for (i, team) in matrix.teams.iter().enumerate() {
        let mid = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            svg,
            r#"<text class="row-label" x="{}" y="{mid}" text-anchor="end" dominant-baseline="middle" font-size="11">{}</text>"#,
            MARGIN - 6,
            xml_escape(team.as_str())
        );
        let _ = writeln!(
            svg,
            r#"<text class="col-label" x="{mid}" y="{}" text-anchor="start" font-size="11" transform="rotate(-60 {mid} {})">{}</text>"#,
            MARGIN - 6,
            MARGIN - 6,
            xml_escape(team.as_str())
        );
    }
    for (i, row) in matrix.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            let (x, y) = (MARGIN + j * CELL, MARGIN + i * CELL);
            let _ = writeln!(
                svg,
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#ffffff"/>"##,
                scale_color(t)
            );
            let ink = if t > 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                svg,
                r#"<text class="value" x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" font-size="10" fill="{ink}">{}</text>"#,
                x + CELL / 2,
                y + CELL / 2,
                fmt2(100.0 * v)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_matrix_svg(matrix: &CrossTeamMatrix, path: &Path) -> Result<()> {
    let title = path.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
    std::fs::write(path, matrix_svg(matrix, title)).at(path)
}

/// Matrix as CSV (percent), first column the training team.
pub fn matrix_csv(matrix: &CrossTeamMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["train_team".to_string()];
    header.extend(matrix.teams.iter().map(|t| t.to_string()));
    w.write_record(&header).map_err(csv_err("matrix"))?;
    for (team, row) in matrix.teams.iter().zip(&matrix.values) {
        let mut rec = vec![team.to_string()];
        rec.extend(row.iter().map(|v| fmt2(100.0 * v)));
        w.write_record(&rec).map_err(csv_err("matrix"))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-epoch mean and population std across folds, in percent.
pub fn curves_csv(curves: &[LearningCurve]) -> Result<String> {
    let epochs = curves
        .first()
        .ok_or_else(|| Error::Metric("no learning curves".into()))?
        .len();
    if curves.iter().any(|c| c.len() != epochs) {
        return Err(Error::Metric("learning curves have different epoch counts".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch", "train_mean", "train_std", "val_mean", "val_std", "test_mean", "test_std",
    ])
    .map_err(csv_err("curves"))?;
    for e in 0..epochs {
        let mut rec = vec![(e + 1).to_string()];
        let columns: [fn(&crate::baseline::EpochStats) -> Option<f64>; 3] =
            [|s| Some(s.train_acc), |s| s.val_acc, |s| s.test_acc];
        for pick in columns {
            let values: Vec<f64> = curves.iter().filter_map(|c| pick(&c.epochs[e])).map(|v| 100.0 * v).collect();
            match aggregate(&values) {
                Ok((mean, std)) => rec.extend([fmt2(mean), fmt2(std)]),
                Err(_) => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(csv_err("curves"))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_curves(curves: &[LearningCurve], path: &Path) -> Result<()> {
    std::fs::write(path, curves_csv(curves)?).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::EpochStats;
    use crate::fixtures;

    #[test]
    fn fixture_row_prints_recomputed_vtg() {
        let t = fixtures::toto();
        let table = ResultsTable::from_percent(t.rows.iter().map(|r| (r.team.clone(), r.densenet.val, r.densenet.test))).unwrap();
        let csv = table.to_csv().unwrap();
        assert!(csv.contains("AiGro,98.99,82.32,16.67\n"), "{csv}");
        assert!(csv.contains("\nMean,97.40,81.19,16.2"));
        assert!(csv.contains("\"SMART AGRICULTURES\"") || csv.contains("SMART AGRICULTURES,"));
    }

    #[test]
    fn single_run_footer() {
        let table = ResultsTable::from_percent([(TeamId::from("A"), 90.0, 80.5)]).unwrap();
        let csv = table.to_csv().unwrap();
        assert!(csv.ends_with("A,90.00,80.50,9.50\nMean,90.00,80.50,9.50\nStd,0.00,0.00,0.00\n"), "{csv}");
        assert!(ResultsTable::from_percent([]).is_err());
    }

    #[test]
    fn json_and_csv_agree() {
        let t = fixtures::loto();
        let table = ResultsTable::from_percent(t.rows.iter().map(|r| (r.team.clone(), r.swin.val, r.swin.test))).unwrap();
        let json: ResultsTable = serde_json::from_str(&table.to_json()).unwrap();
        let csv = table.to_csv().unwrap();
        let mut lines = csv.lines().skip(1);
        for row in json.rows.iter().map(|r| r.values).chain([json.mean, json.std]) {
            let line = lines.next().unwrap();
            let nums: Vec<f64> = line.rsplitn(4, ',').take(3).map(|v| v.parse().unwrap()).collect();
            assert_eq!(nums, vec![row.vtg, row.test_acc, row.val_acc]);
        }
        assert!(!csv.contains("-0.00"));
    }

    fn matrix(values: Vec<Vec<f64>>) -> CrossTeamMatrix {
        let teams = (0..values.len()).map(|i| TeamId::new(format!("T&{i}"))).collect();
        CrossTeamMatrix::new(teams, values).unwrap()
    }

    #[test]
    fn svg_structure() {
        let m = matrix((0..12).map(|i| (0..12).map(|j| ((i * 12 + j) as f64) / 143.0).collect()).collect());
        let svg = matrix_svg(&m, "x");
        assert_eq!(svg.matches(r#"<rect class="cell""#).count(), 144);
        assert!(svg.contains(&format!(r##"fill="{}""##, scale_color(0.0))));
        assert!(svg.contains(r##"fill="#08306b""##));
        assert!(svg.contains(r##"fill="#f7fbff""##));
        assert!(svg.contains("T&amp;0"));
        assert_eq!(svg, matrix_svg(&m, "x"));
    }

    #[test]
    fn svg_label_order() {
        let m = CrossTeamMatrix::new(vec!["Zed".into(), "Ann".into()], vec![vec![0.9, 0.5], vec![0.6, 0.8]]).unwrap();
        let svg = matrix_svg(&m, "toy");
        assert!(svg.find(">Zed<").unwrap() < svg.find(">Ann<").unwrap());
    }

    fn curve(vals: &[(f64, f64, f64)]) -> LearningCurve {
        LearningCurve {
            epochs: vals
                .iter()
                .enumerate()
                .map(|(i, &(a, b, c))| EpochStats {
                    epoch: i + 1,
                    train_acc: a,
                    val_acc: Some(b),
                    test_acc: Some(c),
                })
                .collect(),
        }
    }

    #[test]
    fn curves_aggregate() {
        let a = curve(&[(0.5, 0.4, 0.3), (0.9, 0.8, 0.6)]);
        let b = curve(&[(0.7, 0.6, 0.5), (1.0, 0.9, 0.7)]);
        let csv = curves_csv(&[a.clone(), b]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "1,60.00,10.00,50.00,10.00,40.00,10.00");
        let same = curves_csv(&[a.clone(), a.clone()]).unwrap();
        for line in same.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!((f[2], f[4], f[6]), ("0.00", "0.00", "0.00"));
        }
        assert!(curves_csv(&[a, curve(&[(0.1, 0.1, 0.1)])]).is_err());
    }
}
