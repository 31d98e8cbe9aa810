//! Dataset snapshot directory.
//!
//! `records.bin` is the authoritative artifact: a versioned binary dump
//! of the filtered, indexed records plus the id tables. Trajectories,
//! splits, and the head/tail partition are deterministic functions of
//! those records, so loading recomputes them instead of storing them.
//! `stats.json`, `splits.tsv`, and `head_tail.tsv` are stable documented
//! renderings for external consumers.
//!
//! `records.bin` layout (all integers little-endian):
//!
//! ```text
//! magic "HTS1"
//! u32 n_users, u32 n_locations, u32 n_categories, u64 n_records
//! n_users     x (u32 len, utf-8 id)
//! n_locations x (u32 len, utf-8 id, f64 lat, f64 lon, u32 category)
//! n_categories x (u32 len, utf-8 name)
//! n_records   x (u32 user, u32 loc, u32 category, i64 timestamp)
//! ```

use std::fmt::Write as _;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hiertail_core::dataset::{CheckinDataset, IndexedRecord, LocationMeta};

use super::{
    io_err, read_f64, read_i64, read_str, read_u32, read_u64, write_f64, write_i64, write_str,
    write_u32, write_u64,
};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"HTS1";

pub const RECORDS_FILE: &str = "records.bin";
pub const STATS_FILE: &str = "stats.json";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const HEAD_TAIL_FILE: &str = "head_tail.tsv";

/// True when `path` looks like a snapshot directory.
pub fn is_snapshot_dir(path: &Path) -> bool {
    path.is_dir() && path.join(RECORDS_FILE).is_file()
}

/// Write all four snapshot artifacts. The dataset must be fully
/// derived (segmented, split, and partitioned).
pub fn save_snapshot(dir: &Path, dataset: &CheckinDataset) -> Result<()> {
    if dataset.splits.len() != dataset.trajectories.len()
        || dataset.head_mask.len() != dataset.locations.len()
    {
        return Err(CliError::data(
            "snapshot requires a fully derived dataset (segment, split, partition first)",
        ));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_records_bin(&dir.join(RECORDS_FILE), dataset)?;
    let stats_path = dir.join(STATS_FILE);
    let stats =
        serde_json::to_string_pretty(&dataset.stats()).expect("stats serialization is infallible");
    std::fs::write(&stats_path, stats + "\n").map_err(io_err(&stats_path))?;
    write_splits_tsv(&dir.join(SPLITS_FILE), dataset)?;
    write_head_tail_tsv(&dir.join(HEAD_TAIL_FILE), dataset)?;
    Ok(())
}

/// Read `records.bin` and recompute every derived field.
pub fn load_snapshot(dir: &Path) -> Result<CheckinDataset> {
    let path = dir.join(RECORDS_FILE);
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let mut r = BufReader::new(file);
    let corrupt =
        |what: &str| CliError::data(format!("{}: corrupt snapshot: {what}", path.display()));

    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut r, &mut magic).map_err(io_err(&path))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let n_users = read_u32(&mut r).map_err(io_err(&path))? as usize;
    let n_locations = read_u32(&mut r).map_err(io_err(&path))? as usize;
    let n_categories = read_u32(&mut r).map_err(io_err(&path))? as usize;
    let n_records = read_u64(&mut r).map_err(io_err(&path))? as usize;

    let mut users = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        users.push(read_str(&mut r).map_err(io_err(&path))?);
    }
    let mut locations = Vec::with_capacity(n_locations);
    for _ in 0..n_locations {
        let id = read_str(&mut r).map_err(io_err(&path))?;
        let lat = read_f64(&mut r).map_err(io_err(&path))?;
        let lon = read_f64(&mut r).map_err(io_err(&path))?;
        let category = read_u32(&mut r).map_err(io_err(&path))?;
        if category as usize >= n_categories {
            return Err(corrupt("location category index out of range"));
        }
        locations.push(LocationMeta {
            id,
            lat,
            lon,
            category,
        });
    }
    let mut categories = Vec::with_capacity(n_categories);
    for _ in 0..n_categories {
        categories.push(read_str(&mut r).map_err(io_err(&path))?);
    }
    let mut records = Vec::with_capacity(n_records);
    let mut visit_counts = vec![0u64; n_locations];
    for _ in 0..n_records {
        let user = read_u32(&mut r).map_err(io_err(&path))?;
        let loc = read_u32(&mut r).map_err(io_err(&path))?;
        let cat = read_u32(&mut r).map_err(io_err(&path))?;
        let timestamp = read_i64(&mut r).map_err(io_err(&path))?;
        if user as usize >= n_users || loc as usize >= n_locations || cat as usize >= n_categories {
            return Err(corrupt("record index out of range"));
        }
        visit_counts[loc as usize] += 1;
        records.push(IndexedRecord {
            user,
            loc,
            cat,
            timestamp,
        });
    }

    let mut dataset = CheckinDataset {
        users,
        locations,
        categories,
        records,
        visit_counts,
        trajectories: Vec::new(),
        splits: Vec::new(),
        head_mask: Vec::new(),
    };
    dataset.segment_trajectories();
    dataset.chronological_split();
    dataset.partition_head_tail();
    Ok(dataset)
}

fn write_records_bin(path: &Path, dataset: &CheckinDataset) -> Result<()> {
    fn emit<W: std::io::Write>(w: &mut W, dataset: &CheckinDataset) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, dataset.users.len() as u32)?;
        write_u32(w, dataset.locations.len() as u32)?;
        write_u32(w, dataset.categories.len() as u32)?;
        write_u64(w, dataset.records.len() as u64)?;
        for user in &dataset.users {
            write_str(w, user)?;
        }
        for loc in &dataset.locations {
            write_str(w, &loc.id)?;
            write_f64(w, loc.lat)?;
            write_f64(w, loc.lon)?;
            write_u32(w, loc.category)?;
        }
        for cat in &dataset.categories {
            write_str(w, cat)?;
        }
        for record in &dataset.records {
            write_u32(w, record.user)?;
            write_u32(w, record.loc)?;
            write_u32(w, record.cat)?;
            write_i64(w, record.timestamp)?;
        }
        w.flush()
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    emit(&mut w, dataset).map_err(io_err(path))
}

fn write_splits_tsv(path: &Path, dataset: &CheckinDataset) -> Result<()> {
    let mut out = String::from("trajectory\tuser\tstart\tlength\tsplit\n");
    for (idx, traj) in dataset.trajectories.iter().enumerate() {
        writeln!(
            out,
            "{idx}\t{}\t{}\t{}\t{}",
            dataset.users[traj.user as usize],
            traj.start(),
            traj.points.len(),
            dataset.splits[idx].as_str(),
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn write_head_tail_tsv(path: &Path, dataset: &CheckinDataset) -> Result<()> {
    // Pareto order: count descending, index ascending, head rows first.
    let mut order: Vec<usize> = (0..dataset.locations.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(dataset.visit_counts[i]), i));
    let mut out = String::from("loc_id\tvisits\tgroup\n");
    for i in order {
        writeln!(
            out,
            "{}\t{}\t{}",
            dataset.locations[i].id,
            dataset.visit_counts[i],
            if dataset.head_mask[i] { "head" } else { "tail" },
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(io_err(path))
}
