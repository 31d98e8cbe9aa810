//! Training checkpoint: a versioned binary container plus `meta.json`.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic "HTL1"
//! u32 d, u32 |P|, u32 |U|, u32 H
//! H x u32: per-level class counts C^1..C^H (C^H == |P|)
//! f64 x (|P| * d): location embeddings, row-major
//! f64 x (|U| * d): user embeddings, row-major
//! f64 x (d * |P|): output weights, row-major
//! f64 x |P|:       output bias
//! f64 x C^h for h = 1..H: adaptive weight pre-activations, coarse first
//! ```
//!
//! `meta.json` carries the resolved settings, the trained loss config,
//! and the epoch log; it holds no timestamps or absolute paths, so
//! fixed-seed runs produce byte-identical files.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hiertail_core::loss::AdaptiveWeights;
use hiertail_core::train::{BackboneParams, EpochLog, TrainConfig};
use serde::Serialize;

use super::{io_err, read_f64, read_u32, write_f64, write_u32};
use crate::config::Settings;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"HTL1";

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const META_FILE: &str = "meta.json";
pub const EPOCHS_FILE: &str = "epochs.tsv";

/// Everything the binary container holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: BackboneParams,
    pub weights: AdaptiveWeights,
    /// Per-level class counts of the hierarchy the weights belong to.
    pub class_counts: Vec<usize>,
}

/// Sidecar metadata; serialized once, never parsed back by the CLI.
#[derive(Debug, Serialize)]
pub struct TrainMeta<'a> {
    pub settings: &'a Settings,
    pub train_config: &'a TrainConfig,
    pub epochs: &'a [EpochLog],
    pub best_epoch: Option<usize>,
}

pub fn save_checkpoint(
    path: &Path,
    params: &BackboneParams,
    weights: &AdaptiveWeights,
) -> Result<()> {
    let levels = weights.theta_levels();
    let leaves = levels.last().map(Vec::len).unwrap_or(0);
    if leaves != params.num_locations() {
        return Err(CliError::data(format!(
            "checkpoint inconsistency: {} weight leaves vs {} backbone locations",
            leaves,
            params.num_locations()
        )));
    }
    fn emit<W: Write>(
        w: &mut W,
        params: &BackboneParams,
        levels: &[Vec<f64>],
    ) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, params.d as u32)?;
        write_u32(w, params.num_locations() as u32)?;
        write_u32(w, params.num_users() as u32)?;
        write_u32(w, levels.len() as u32)?;
        for level in levels {
            write_u32(w, level.len() as u32)?;
        }
        for block in [
            &params.loc_embeddings,
            &params.user_embeddings,
            &params.output_weights,
            &params.output_bias,
        ] {
            for &value in block {
                write_f64(w, value)?;
            }
        }
        for level in levels {
            for &value in level {
                write_f64(w, value)?;
            }
        }
        w.flush()
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    emit(&mut w, params, levels).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let corrupt =
        |what: &str| CliError::data(format!("{}: corrupt checkpoint: {what}", path.display()));
    // A short read means a truncated artifact, not a filesystem fault.
    let fail = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            corrupt("truncated file")
        } else {
            CliError::io(path, e)
        }
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fail)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let d = read_u32(&mut r).map_err(fail)? as usize;
    let num_locations = read_u32(&mut r).map_err(fail)? as usize;
    let num_users = read_u32(&mut r).map_err(fail)? as usize;
    let depth = read_u32(&mut r).map_err(fail)? as usize;
    if d == 0 || depth == 0 {
        return Err(corrupt("zero dimension"));
    }
    let mut class_counts = Vec::with_capacity(depth);
    for _ in 0..depth {
        class_counts.push(read_u32(&mut r).map_err(fail)? as usize);
    }
    if class_counts[depth - 1] != num_locations {
        return Err(corrupt("leaf count disagrees with location count"));
    }

    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let mut block = Vec::with_capacity(len);
        for _ in 0..len {
            block.push(read_f64(&mut r).map_err(fail)?);
        }
        Ok(block)
    };
    let params = BackboneParams {
        d,
        loc_embeddings: read_block(num_locations * d)?,
        user_embeddings: read_block(num_users * d)?,
        output_weights: read_block(d * num_locations)?,
        output_bias: read_block(num_locations)?,
    };
    let mut theta = Vec::with_capacity(depth);
    for &count in &class_counts {
        theta.push(read_block(count)?);
    }
    Ok(Checkpoint {
        params,
        weights: AdaptiveWeights::from_theta(theta),
        class_counts,
    })
}

/// Write `meta.json` next to the checkpoint.
pub fn save_meta(path: &Path, meta: &TrainMeta<'_>) -> Result<()> {
    let json = serde_json::to_string_pretty(meta).expect("meta serialization is infallible");
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

/// Write the epoch log as a three-column TSV.
pub fn save_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("epoch\ttrain_loss\tval_mrr5\n");
    for entry in log {
        writeln!(
            out,
            "{}\t{}\t{}",
            entry.epoch, entry.train_loss, entry.val_mrr5
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(io_err(path))
}
