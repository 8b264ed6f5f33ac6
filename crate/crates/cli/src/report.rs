//! Report rows and CSV/JSON emission.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One result row: a strategy evaluated against one target at one balance
/// and seed. `accuracy` is absent when the strategy failed; `error` then
/// carries the stage and message. Wall-clock runtime is reported through
/// the timings sidecar so reports stay byte-identical across runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub target: String,
    pub balance: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub diagnostics: String,
    #[serde(default)]
    pub error: String,
    /// Seconds; populated only when `timings_in_report` is set.
    #[serde(default)]
    pub runtime_s: Option<f64>,
}

pub const CSV_HEADER: &str = "strategy,target,balance,seed,accuracy,diagnostics,error,runtime_s";

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let acc = r
            .accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        let rt = r
            .runtime_s
            .map(|t| format!("{t:.3}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_escape(&r.strategy),
            csv_escape(&r.target),
            csv_escape(&r.balance),
            r.seed,
            acc,
            csv_escape(&r.diagnostics),
            csv_escape(&r.error),
            rt
        ));
    }
    out
}

pub fn rows_to_json(rows: &[ReportRow]) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(rows)
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))
}

pub fn rows_from_json(text: &str) -> Result<Vec<ReportRow>, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("report parse: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(HarnessError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Writes rows in the requested format. Refuses empty row sets.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config(
            "refusing to emit an empty report".into(),
        ));
    }
    let body = match format {
        ReportFormat::Csv => rows_to_csv(rows),
        ReportFormat::Json => rows_to_json(rows)?,
    };
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::Io(path.into(), e))?;
    f.write_all(body.as_bytes())
        .map_err(|e| HarnessError::Io(path.into(), e))?;
    Ok(())
}
