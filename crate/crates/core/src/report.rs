//! Report emission: results tables, radar-chart data, dataset statistics.
//!
//! Tables print percentages with one decimal as `mean±SE`; JSON renderings keep
//! full precision. Radar data always has 12 axes in a fixed order: the six
//! attributes at the high level, then the same six at the low level, so that
//! axis `k` and axis `k + 6` sit on opposite ends of the chart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Attribute, DatasetStats, Level};
use crate::metrics::{Diagnostics, MeanSe, MetricsReport};
use crate::prompts::AlignmentTarget;
use crate::runner::{LogRecord, RunConfig, RunOutcome};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad table cell `{0}`")]
    Cell(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the resolved configuration JSON.
    pub config_hash: String,
    pub backend_id: String,
    /// Earliest and latest record timestamps in the log.
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl Provenance {
    /// Derived from the log alone, so regenerated reports match the original.
    pub fn from_log(config: &RunConfig, records: &[LogRecord]) -> Self {
        let mut ids: Vec<&str> = records.iter().map(|r| r.backend_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        Provenance {
            config_hash: hex::encode(Sha256::digest(config.to_json().as_bytes())),
            backend_id: ids.join(","),
            started_ms: records.iter().map(|r| r.timestamp_ms).min().unwrap_or(0),
            finished_ms: records.iter().map(|r| r.timestamp_ms).max().unwrap_or(0),
        }
    }
}

/// One attribute's accuracy at both levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBreakdown {
    pub attribute: Attribute,
    pub name: String,
    pub high: Option<MeanSe>,
    pub low: Option<MeanSe>,
    /// Decisions per run at each level.
    pub n_high: usize,
    pub n_low: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// Row label, e.g. `aligned-sc`.
    pub method: String,
    pub metrics: MetricsReport,
    pub breakdown: Vec<AttributeBreakdown>,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl ReportBundle {
    pub fn new(method: impl Into<String>, metrics: MetricsReport, provenance: Provenance) -> Self {
        let breakdown = Attribute::ALL
            .iter()
            .filter_map(|&a| {
                let high = metrics.target(AlignmentTarget::new(a, Level::High));
                let low = metrics.target(AlignmentTarget::new(a, Level::Low));
                if high.is_none() && low.is_none() {
                    return None;
                }
                Some(AttributeBreakdown {
                    attribute: a,
                    name: a.display_name().to_string(),
                    high: high.map(|t| t.accuracy),
                    low: low.map(|t| t.accuracy),
                    n_high: high.map_or(0, |t| t.n),
                    n_low: low.map_or(0, |t| t.n),
                })
            })
            .collect();
        ReportBundle {
            method: method.into(),
            diagnostics: metrics.diagnostics.clone(),
            metrics,
            breakdown,
            provenance,
        }
    }

    pub fn from_run(config: &RunConfig, outcome: &RunOutcome) -> Self {
        ReportBundle::new(
            config.mode.as_str(),
            outcome.evaluation.report.clone(),
            Provenance::from_log(config, &outcome.records),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn table_row(&self) -> TableRow {
        TableRow::new(&self.method, &self.metrics)
    }
}

pub fn ablation_label(n_pos: u32, n_neg: u32) -> String {
    if n_neg == 0 {
        format!("aligned-sc ({n_pos} pos)")
    } else {
        format!("aligned-sc ({n_pos} pos/{n_neg} neg)")
    }
}

/// A results-table row; values are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub align_high: Option<MeanSe>,
    pub align_low: Option<MeanSe>,
    pub f1: Option<MeanSe>,
}

pub const TABLE_HEADER: [&str; 4] = ["method", "align_high", "align_low", "f1"];

impl TableRow {
    pub fn new(method: &str, m: &MetricsReport) -> Self {
        TableRow {
            method: method.to_string(),
            align_high: m.overall_high,
            align_low: m.overall_low,
            f1: m.f1,
        }
    }

    fn cells(&self) -> [String; 4] {
        [
            self.method.clone(),
            format_cell(self.align_high),
            format_cell(self.align_low),
            format_cell(self.f1),
        ]
    }
}

/// `mean±SE` in percent with one decimal; empty when absent.
pub fn format_cell(v: Option<MeanSe>) -> String {
    match v {
        Some(m) => format!("{:.1}±{:.1}", m.mean * 100.0, m.se * 100.0),
        None => String::new(),
    }
}

/// Inverse of [`format_cell`]; yields percentages.
pub fn parse_cell(cell: &str) -> Result<Option<(f64, f64)>, ReportError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let bad = || ReportError::Cell(cell.to_string());
    let (mean, se) = cell.split_once('±').ok_or_else(bad)?;
    Ok(Some((
        mean.parse().map_err(|_| bad())?,
        se.parse().map_err(|_| bad())?,
    )))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn table_csv(rows: &[TableRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        w.write_record(r.cells())?;
    }
    finish_csv(w)
}

/// Full-precision percentages.
pub fn table_json(rows: &[TableRow]) -> String {
    let pct = |v: Option<MeanSe>| {
        v.map(|m| MeanSe {
            mean: m.mean * 100.0,
            se: m.se * 100.0,
        })
    };
    let rows: Vec<TableRow> = rows
        .iter()
        .map(|r| TableRow {
            method: r.method.clone(),
            align_high: pct(r.align_high),
            align_low: pct(r.align_low),
            f1: pct(r.f1),
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "unit": "percent", "rows": rows }))
        .expect("table serializes")
}

/// A re-parsed table row: percentages as `(mean, se)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub method: String,
    pub align_high: Option<(f64, f64)>,
    pub align_low: Option<(f64, f64)>,
    pub f1: Option<(f64, f64)>,
}

pub fn parse_table_csv(text: &str) -> Result<Vec<ParsedRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ParsedRow {
            method: get(0).to_string(),
            align_high: parse_cell(get(1))?,
            align_low: parse_cell(get(2))?,
            f1: parse_cell(get(3))?,
        });
    }
    Ok(rows)
}

/// Plain-text rendering for terminals.
pub fn table_text(rows: &[TableRow]) -> String {
    let header = ["Method", "Align-High", "Align-Low", "F1"];
    let cells: Vec<[String; 4]> = rows.iter().map(|r| r.cells()).collect();
    let width = |i: usize| {
        cells
            .iter()
            .map(|c| c[i].chars().count())
            .chain([header[i].len()])
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..4).map(width).collect();
    let mut out = String::new();
    let line = |out: &mut String, c: [&str; 4]| {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            c[0],
            c[1],
            c[2],
            c[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(&mut out, header);
    for c in &cells {
        line(&mut out, [&c[0], &c[1], &c[2], &c[3]]);
    }
    out
}

/// Fixed radar axis order: six highs, then six lows.
pub fn radar_axes() -> Vec<AlignmentTarget> {
    Level::ALL
        .iter()
        .flat_map(|&l| {
            Attribute::ALL
                .iter()
                .map(move |&a| AlignmentTarget::new(a, l))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub name: String,
    /// Mean accuracy in [0, 1] per axis; `null` where the target was not run.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub axes: Vec<String>,
    pub series: Vec<RadarSeries>,
}

impl RadarData {
    pub fn new(bundles: &[ReportBundle]) -> Self {
        let axes = radar_axes();
        RadarData {
            axes: axes.iter().map(|t| t.to_string()).collect(),
            series: bundles
                .iter()
                .map(|b| RadarSeries {
                    name: b.method.clone(),
                    values: axes
                        .iter()
                        .map(|&t| b.metrics.target(t).map(|s| s.accuracy.mean))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("radar serializes")
    }

    /// One row per axis, one column per series.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["axis".to_string()];
        header.extend(self.series.iter().map(|s| s.name.clone()));
        w.write_record(&header)?;
        for (i, axis) in self.axes.iter().enumerate() {
            let mut row = vec![axis.clone()];
            row.extend(
                self.series
                    .iter()
                    .map(|s| s.values[i].map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        finish_csv(w)
    }
}

/// Gives each bundle a distinct row label, qualifying with the backend when
/// bundles come from more than one.
pub fn label_rows(bundles: &mut [ReportBundle]) {
    let first = bundles.first().map(|b| b.provenance.backend_id.clone());
    if bundles
        .iter()
        .any(|b| Some(&b.provenance.backend_id) != first.as_ref())
    {
        for b in bundles.iter_mut() {
            b.method = format!("{} {}", b.provenance.backend_id, b.method);
        }
    }
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ReportError> {
    std::fs::write(&path, contents).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `report.json` (all bundles), `table.{csv,json}` and
/// `radar.{csv,json}` into `dir`.
pub fn emit_report(
    bundles: &[ReportBundle],
    format: Format,
    dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    ensure_dir(dir)?;
    let rows: Vec<TableRow> = bundles.iter().map(|b| b.table_row()).collect();
    let radar = RadarData::new(bundles);
    let ext = format.extension();
    let (table, radar_text) = match format {
        Format::Csv => (table_csv(&rows)?, radar.to_csv()?),
        Format::Json => (table_json(&rows), radar.to_json()),
    };
    Ok(vec![
        write(
            dir.join("report.json"),
            &serde_json::to_string_pretty(bundles).expect("bundles serialize"),
        )?,
        write(dir.join(format!("table.{ext}")), &table)?,
        write(dir.join(format!("radar.{ext}")), &radar_text)?,
    ])
}

/// One row per grid cell.
pub fn ablation_rows(cells: &[((u32, u32), MetricsReport)]) -> Vec<TableRow> {
    cells
        .iter()
        .map(|((p, n), m)| TableRow::new(&ablation_label(*p, *n), m))
        .collect()
}

/// Writes `ablation.{csv,json}` into `dir`.
pub fn emit_ablation(
    cells: &[((u32, u32), MetricsReport)],
    format: Format,
    dir: &Path,
) -> Result<PathBuf, ReportError> {
    ensure_dir(dir)?;
    let rows = ablation_rows(cells);
    let text = match format {
        Format::Csv => table_csv(&rows)?,
        Format::Json => table_json(&rows),
    };
    write(dir.join(format!("ablation.{}", format.extension())), &text)
}

pub const STATS_HEADER: [&str; 4] = ["attribute", "scenarios", "context_words", "choice_words"];

fn stats_rows(stats: &DatasetStats) -> Vec<[String; 4]> {
    let mut rows: Vec<[String; 4]> = stats
        .per_attribute
        .iter()
        .map(|(a, s)| {
            [
                a.display_name().to_string(),
                s.scenarios.to_string(),
                s.context_words.to_string(),
                s.choice_words.to_string(),
            ]
        })
        .collect();
    let t = &stats.total;
    rows.push([
        "Total".into(),
        t.scenarios.to_string(),
        t.context_words.to_string(),
        t.choice_words.to_string(),
    ]);
    rows
}

pub fn stats_csv(stats: &DatasetStats) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATS_HEADER)?;
    for r in stats_rows(stats) {
        w.write_record(&r)?;
    }
    finish_csv(w)
}

pub fn stats_text(stats: &DatasetStats) -> String {
    let mut out = format!(
        "{:<18} {:>9} {:>13} {:>12}\n",
        "Attribute", "Scenarios", "Context words", "Choice words"
    );
    for r in stats_rows(stats) {
        let _ = writeln!(out, "{:<18} {:>9} {:>13} {:>12}", r[0], r[1], r[2], r[3]);
    }
    out
}
