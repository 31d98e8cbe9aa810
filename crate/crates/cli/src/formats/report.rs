//! Evaluation report artifacts.
//!
//! `report.json` schema: `{"metadata": {...}, "mrr": {k: {group: value}},
//! "ndcg": {k: {group: value}}, "hier_distance": {...}}` where groups
//! are `total`, `head`, `tail`. Metadata records that metric means are
//! taken per prediction (not per user) along with group sample counts.
//! `report.tsv` is a flat `metric, k, group, value` table for
//! spreadsheet import, and `render_table` produces the printed view.

use std::fmt::Write as _;
use std::path::Path;

use hiertail_core::metrics::{EvalReport, GroupCounts, GroupValues, HierDistanceStats};
use serde::{Deserialize, Serialize};

use super::io_err;
use crate::error::{CliError, Result};

pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TSV_FILE: &str = "report.tsv";

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Metric means are over predictions, not users.
    pub averaging: String,
    pub ks: Vec<usize>,
    pub counts: GroupCounts,
}

/// The `report.json` document.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub metadata: ReportMetadata,
    pub mrr: std::collections::BTreeMap<usize, GroupValues>,
    pub ndcg: std::collections::BTreeMap<usize, GroupValues>,
    pub hier_distance: HierDistanceStats,
}

impl ReportDoc {
    pub fn from_report(report: &EvalReport) -> Self {
        Self {
            metadata: ReportMetadata {
                averaging: "per-prediction".to_string(),
                ks: report.ks.clone(),
                counts: report.counts,
            },
            mrr: report.mrr.clone().into_iter().collect(),
            ndcg: report.ndcg.clone().into_iter().collect(),
            hier_distance: report.hier.clone(),
        }
    }
}

pub fn save_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let doc = ReportDoc::from_report(report);
    let json_path = dir.join(REPORT_JSON_FILE);
    let json = serde_json::to_string_pretty(&doc).expect("report serialization is infallible");
    std::fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
    let tsv_path = dir.join(REPORT_TSV_FILE);
    std::fs::write(&tsv_path, render_tsv(report)).map_err(io_err(&tsv_path))
}

pub fn load_report(path: &Path) -> Result<ReportDoc> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: bad report: {e}", path.display())))
}

pub fn render_tsv(report: &EvalReport) -> String {
    let mut out = String::from("metric\tk\tgroup\tvalue\n");
    let mut emit = |metric: &str, k: String, values: &GroupValues| {
        for (group, value) in [
            ("total", values.total),
            ("head", values.head),
            ("tail", values.tail),
        ] {
            writeln!(out, "{metric}\t{k}\t{group}\t{value}").expect("string write");
        }
    };
    for (&k, values) in &report.mrr {
        emit("mrr", k.to_string(), values);
    }
    for (&k, values) in &report.ndcg {
        emit("ndcg", k.to_string(), values);
    }
    writeln!(
        out,
        "hier_mean_distance\t-\ttotal\t{}",
        report.hier.mean_distance
    )
    .expect("string write");
    for (h, rate) in report.hier.level_match_rate.iter().enumerate() {
        writeln!(out, "level_match\t{}\ttotal\t{rate}", h + 1).expect("string write");
    }
    out
}

/// Fixed-width text table, one row per (metric, k).
pub fn render_table(doc: &ReportDoc) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<6} {:>4}  {:>8}  {:>8}  {:>8}",
        "metric", "k", "total", "head", "tail"
    )
    .expect("string write");
    let mut row = |metric: &str, k: usize, v: &GroupValues| {
        writeln!(
            out,
            "{:<6} {:>4}  {:>8.4}  {:>8.4}  {:>8.4}",
            metric, k, v.total, v.head, v.tail
        )
        .expect("string write");
    };
    for (&k, values) in &doc.mrr {
        row("mrr", k, values);
    }
    for (&k, values) in &doc.ndcg {
        row("ndcg", k, values);
    }
    writeln!(
        out,
        "predictions: total {}, head {}, tail {}",
        doc.metadata.counts.total, doc.metadata.counts.head, doc.metadata.counts.tail
    )
    .expect("string write");
    writeln!(
        out,
        "mean hierarchical distance: {:.4}",
        doc.hier_distance.mean_distance
    )
    .expect("string write");
    let rates: Vec<String> = doc
        .hier_distance
        .level_match_rate
        .iter()
        .enumerate()
        .map(|(h, r)| format!("L{}={:.4}", h + 1, r))
        .collect();
    writeln!(out, "level match rates: {}", rates.join(" ")).expect("string write");
    out
}
