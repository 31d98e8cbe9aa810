//! Raw check-in files: CSV with a fixed header, or JSONL with the same
//! keys. Malformed rows are collected with their line numbers and
//! reported in one error so a bad export surfaces every problem class
//! at once.

use std::path::Path;

use hiertail_core::dataset::CheckinRecord;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Exact CSV column set, in header order.
pub const CSV_COLUMNS: [&str; 6] = [
    "user_id",
    "loc_id",
    "lat",
    "lon",
    "category",
    "timestamp_utc",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckinFormat {
    Csv,
    Jsonl,
}

impl CheckinFormat {
    /// Infer from the file extension; `.jsonl`/`.json` mean JSONL,
    /// anything else is treated as CSV.
    pub fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Self::Jsonl,
            _ => Self::Csv,
        }
    }
}

/// One row in either file format; field names double as CSV headers
/// and JSONL keys.
#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    user_id: String,
    loc_id: String,
    lat: f64,
    lon: f64,
    category: String,
    timestamp_utc: i64,
}

impl RawRow {
    fn into_record(self, line: u64, bad: &mut Vec<String>) -> Option<CheckinRecord> {
        let record = CheckinRecord {
            user_id: self.user_id,
            loc_id: self.loc_id,
            lat: self.lat,
            lon: self.lon,
            category: self.category,
            timestamp: self.timestamp_utc,
        };
        match record.validate() {
            Ok(()) => Some(record),
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                None
            }
        }
    }
}

fn fail_on_bad(path: &Path, total: usize, bad: Vec<String>) -> Result<()> {
    if bad.is_empty() {
        return Ok(());
    }
    Err(CliError::data(format!(
        "{}: {} of {} rows malformed; first: {}",
        path.display(),
        bad.len(),
        bad.len() + total,
        bad[0],
    )))
}

/// Parse a check-in file. Returns records in file order; any malformed
/// row fails the whole parse with a count and the first offending line.
pub fn read_checkins(path: &Path, format: CheckinFormat) -> Result<Vec<CheckinRecord>> {
    match format {
        CheckinFormat::Csv => read_csv(path),
        CheckinFormat::Jsonl => read_jsonl(path),
    }
}

fn read_csv(path: &Path) -> Result<Vec<CheckinRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .clone();
    for column in CSV_COLUMNS {
        if !headers.iter().any(|h| h == column) {
            return Err(CliError::data(format!(
                "{}: line 1: missing column `{column}`",
                path.display()
            )));
        }
    }
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for row in reader.records() {
        match row {
            Ok(record) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                match record.deserialize::<RawRow>(Some(&headers)) {
                    Ok(raw) => {
                        if let Some(parsed) = raw.into_record(line, &mut bad) {
                            records.push(parsed);
                        }
                    }
                    Err(e) => bad.push(format!("line {line}: {e}")),
                }
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                bad.push(format!("line {line}: {e}"));
            }
        }
    }
    fail_on_bad(path, records.len(), bad)?;
    Ok(records)
}

fn read_jsonl(path: &Path) -> Result<Vec<CheckinRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let number = idx as u64 + 1;
        match serde_json::from_str::<RawRow>(line) {
            Ok(raw) => {
                if let Some(record) = raw.into_record(number, &mut bad) {
                    records.push(record);
                }
            }
            Err(e) => bad.push(format!("line {number}: {e}")),
        }
    }
    fail_on_bad(path, records.len(), bad)?;
    Ok(records)
}

/// Write records as CSV with the canonical header.
pub fn write_checkins_csv(path: &Path, records: &[CheckinRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for record in records {
        let row = RawRow {
            user_id: record.user_id.clone(),
            loc_id: record.loc_id.clone(),
            lat: record.lat,
            lon: record.lon,
            category: record.category.clone(),
            timestamp_utc: record.timestamp,
        };
        writer.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}
