//! Hierarchy mapping files: UTF-8 text, one `child<TAB>parent` pair per
//! line, `#` comment lines and blank lines ignored. Three files define
//! a four-level tree, fine to coarse: `loc2cat.tsv`, `cat2act.tsv`,
//! `act2need.tsv` by convention, though paths are always explicit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// Parse one mapping file into (child, parent) pairs in file order.
pub fn read_mapping(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (child, parent) = line.split_once('\t').ok_or_else(|| {
            CliError::data(format!(
                "{}: line {}: expected `child<TAB>parent`, got `{line}`",
                path.display(),
                idx + 1
            ))
        })?;
        if child.is_empty() || parent.is_empty() {
            return Err(CliError::data(format!(
                "{}: line {}: empty name",
                path.display(),
                idx + 1
            )));
        }
        pairs.push((child.to_string(), parent.to_string()));
    }
    Ok(pairs)
}

/// Write pairs in the same format, one per line, no comments.
pub fn write_mapping(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (child, parent) in pairs {
        writeln!(out, "{child}\t{parent}").expect("string write");
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Conventional file names, fine to coarse, matching the adjacency
/// order expected by the hierarchy builder.
pub const MAPPING_FILE_NAMES: [&str; 3] = ["loc2cat.tsv", "cat2act.tsv", "act2need.tsv"];
