//! CSV and JSON report writers. Output is UTF-8 with LF line endings and
//! rows sorted by config key, so equal inputs give byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vqa_fusion::assembly::{AttentionMode, FeatureKind};
use vqa_fusion::complexity::ComplexityReport;
use vqa_fusion::fusion::FusionKind;

use crate::error::{BenchError, Result};
use crate::sweep::SweepRecord;
use crate::tradeoff::Tradeoff;

pub const CSV_HEADER: [&str; 11] = [
    "config_key",
    "feature",
    "feature_kind",
    "fusion",
    "attention",
    "params",
    "params_offset",
    "flops",
    "flops_offset",
    "wall_time_us_median",
    "accuracy",
];

/// One output row: a complexity report and, after a join, its accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub record: SweepRecord,
    pub accuracy: Option<f64>,
}

impl ReportRow {
    pub fn new(record: SweepRecord, accuracy: Option<f64>) -> ReportRow {
        ReportRow { record, accuracy }
    }

    pub fn config_key(&self) -> String {
        self.record.key.to_string()
    }

    pub fn report(&self) -> &ComplexityReport {
        &self.record.report
    }
}

impl std::ops::Deref for ReportRow {
    type Target = SweepRecord;

    fn deref(&self) -> &SweepRecord {
        &self.record
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// From the output file extension; anything but `.json` is CSV.
    pub fn for_path(path: Option<&Path>) -> Format {
        match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(BenchError::Config(format!("unknown format '{s}' (valid: csv, json)"))),
        }
    }
}

fn sorted(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut out: Vec<&ReportRow> = rows.iter().collect();
    out.sort_by_key(|r| r.config_key());
    out
}

fn csv_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Invariant(format!("CSV encoding failed: {e}"))
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in sorted(rows) {
        let r = row.report();
        let k = &row.key;
        w.write_record([
            row.config_key(),
            k.feature.clone(),
            k.feature_kind.to_string(),
            k.fusion.label().to_string(),
            k.attention.to_string(),
            r.trainable_params.to_string(),
            r.bu_param_offset.to_string(),
            r.flops.to_string(),
            r.bu_flop_offset.to_string(),
            r.wall_time.map_or(String::new(), |t| t.median_us.to_string()),
            row.accuracy.map_or(String::new(), |a| a.to_string()),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

#[derive(Serialize)]
struct JsonRow<'a> {
    config_key: String,
    feature: &'a str,
    feature_kind: FeatureKind,
    fusion: FusionKind,
    attention: AttentionMode,
    #[serde(flatten)]
    report: &'a ComplexityReport,
    accuracy: Option<f64>,
}

fn json_rows(rows: &[ReportRow]) -> Vec<JsonRow<'_>> {
    sorted(rows)
        .into_iter()
        .map(|r| JsonRow {
            config_key: r.config_key(),
            feature: &r.key.feature,
            feature_kind: r.key.feature_kind,
            fusion: r.key.fusion,
            attention: r.key.attention,
            report: r.report(),
            accuracy: r.accuracy,
        })
        .collect()
}

fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| BenchError::Invariant(format!("JSON encoding failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// A JSON array of rows.
pub fn to_json(rows: &[ReportRow]) -> Result<String> {
    to_json_string(&json_rows(rows))
}

#[derive(Serialize)]
struct JsonTradeoff<'a> {
    dataset: &'a str,
    axis: &'static str,
    rows: Vec<JsonRow<'a>>,
    unmatched_reports: &'a [String],
    unmatched_fixture: &'a [String],
}

/// A JSON object with the joined rows and both unmatched lists.
pub fn tradeoff_to_json(t: &Tradeoff) -> Result<String> {
    to_json_string(&JsonTradeoff {
        dataset: &t.dataset,
        axis: t.axis.name(),
        rows: json_rows(&t.rows),
        unmatched_reports: &t.unmatched_reports,
        unmatched_fixture: &t.unmatched_fixture,
    })
}

/// `side,config_key` listing of unmatched keys, `side` being `report` or
/// `fixture`.
pub fn unmatched_csv(t: &Tradeoff) -> String {
    let mut s = String::from("side,config_key\n");
    for k in &t.unmatched_reports {
        s.push_str(&format!("report,{k}\n"));
    }
    for k in &t.unmatched_fixture {
        s.push_str(&format!("fixture,{k}\n"));
    }
    s
}

/// Where the unmatched listing of a CSV tradeoff report goes:
/// `out.csv` -> `out.unmatched.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.unmatched.csv"))
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn write_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| BenchError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| BenchError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Emits sweep rows in `format`.
pub fn emit_rows(rows: &[ReportRow], format: Format, path: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv(rows)?,
        Format::Json => to_json(rows)?,
    };
    write_text(&text, path)
}

/// Emits a joined report. CSV output puts the unmatched keys in a sidecar
/// file next to `path` (or on stderr when writing to stdout); JSON output
/// carries them inline.
pub fn emit_tradeoff(t: &Tradeoff, format: Format, path: Option<&Path>) -> Result<()> {
    match format {
        Format::Json => write_text(&tradeoff_to_json(t)?, path),
        Format::Csv => {
            write_text(&to_csv(&t.rows)?, path)?;
            let side = unmatched_csv(t);
            match path {
                Some(p) => {
                    let sp = sidecar_path(p);
                    std::fs::write(&sp, side).map_err(|e| BenchError::io(&sp, e))
                }
                None => {
                    eprint!("{side}");
                    Ok(())
                }
            }
        }
    }
}
