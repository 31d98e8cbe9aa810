//! Check-in dataset pipeline: filtering, indexing, trajectory
//! segmentation, chronological splitting, and the head/tail partition.
//!
//! The pipeline is a fixed sequence of deterministic transforms:
//!
//! 1. [`filter_and_index`] iterates sparse-location and sparse-user
//!    removal to a fixed point, then assigns dense indices by
//!    lexicographic id and sorts records canonically (user, time,
//!    location). Everything downstream is therefore invariant to input
//!    record order.
//! 2. [`CheckinDataset::segment_trajectories`] cuts each user's record
//!    stream into 24-hour windows anchored at the window's first
//!    check-in and keeps windows with at least two points.
//! 3. [`CheckinDataset::chronological_split`] tags each user's
//!    trajectories 8:1:1 in time order (floor rounding, remainder to
//!    test) and then drops val/test trajectories touching users or
//!    locations absent from train.
//! 4. [`CheckinDataset::partition_head_tail`] marks the top 20% of
//!    locations by visit count (ties to the smaller index) as the head
//!    group, with counts taken over the full filtered record set, not
//!    just train.
//!
//! Prediction examples ([`Sample`]) are (prefix, next) pairs expanded
//! from trajectories.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetError {
    EmptyInput,
    /// The filter fixed point removed every record.
    EmptyAfterFilter,
    ValueOutOfRange {
        field: &'static str,
        value: f64,
    },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "no records supplied"),
            Self::EmptyAfterFilter => write!(f, "filtering removed every record"),
            Self::ValueOutOfRange { field, value } => {
                write!(f, "{field} out of range: {value}")
            }
        }
    }
}

impl core::error::Error for DatasetError {}

/// One raw check-in row.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckinRecord {
    pub user_id: String,
    pub loc_id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
    /// UTC seconds.
    pub timestamp: i64,
}

impl CheckinRecord {
    /// Range checks; parsers surface these with a line number attached.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(DatasetError::ValueOutOfRange {
                field: "lat",
                value: self.lat,
            });
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(DatasetError::ValueOutOfRange {
                field: "lon",
                value: self.lon,
            });
        }
        if self.timestamp < 0 {
            return Err(DatasetError::ValueOutOfRange {
                field: "timestamp_utc",
                value: self.timestamp as f64,
            });
        }
        Ok(())
    }
}

/// Check-in with all ids resolved to dense indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexedRecord {
    pub user: u32,
    pub loc: u32,
    pub cat: u32,
    pub timestamp: i64,
}

/// Per-location metadata, taken from the location's first record in
/// canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationMeta {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrajectoryPoint {
    pub loc: u32,
    pub cat: u32,
    pub timestamp: i64,
}

/// One user's check-ins within a single 24-hour window; always at least
/// two points so it yields a (prefix, next) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user: u32,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn start(&self) -> i64 {
        self.points[0].timestamp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

/// One next-location prediction example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub user: u32,
    /// Locations visited so far within the trajectory, in order.
    pub prefix: Vec<u32>,
    /// The location to predict.
    pub target: u32,
}

/// Minimum-support thresholds driving the filter fixed point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterThresholds {
    pub min_location_visits: u32,
    pub min_user_checkins: u32,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_location_visits: 15,
            min_user_checkins: 100,
        }
    }
}

/// Headline counts in the shape of a dataset summary table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetStats {
    pub records: u64,
    pub users: u64,
    pub locations: u64,
    pub trajectories: u64,
    pub train_trajectories: u64,
    pub val_trajectories: u64,
    pub test_trajectories: u64,
    pub head_locations: u64,
}

/// The fully indexed dataset and everything derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckinDataset {
    /// Index to user id, lexicographically sorted.
    pub users: Vec<String>,
    /// Index to location metadata, id-sorted.
    pub locations: Vec<LocationMeta>,
    /// Index to category name, lexicographically sorted.
    pub categories: Vec<String>,
    /// Canonical order: (user, timestamp, loc).
    pub records: Vec<IndexedRecord>,
    /// Check-ins per location over `records`.
    pub visit_counts: Vec<u64>,
    pub trajectories: Vec<Trajectory>,
    /// Parallel to `trajectories`; empty until split.
    pub splits: Vec<SplitTag>,
    /// Parallel to `locations`; empty until partitioned.
    pub head_mask: Vec<bool>,
}

/// Iterate sparse-location / sparse-user removal to a fixed point, then
/// index survivors densely by lexicographic id.
pub fn filter_and_index(
    records: &[CheckinRecord],
    thresholds: FilterThresholds,
) -> Result<CheckinDataset, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut alive: Vec<&CheckinRecord> = records.iter().collect();
    loop {
        let mut loc_counts: BTreeMap<&str, u32> = BTreeMap::new();
        for r in &alive {
            *loc_counts.entry(r.loc_id.as_str()).or_insert(0) += 1;
        }
        let before = alive.len();
        alive.retain(|r| loc_counts[r.loc_id.as_str()] >= thresholds.min_location_visits);
        let mut user_counts: BTreeMap<&str, u32> = BTreeMap::new();
        for r in &alive {
            *user_counts.entry(r.user_id.as_str()).or_insert(0) += 1;
        }
        alive.retain(|r| user_counts[r.user_id.as_str()] >= thresholds.min_user_checkins);
        if alive.len() == before {
            break;
        }
    }
    if alive.is_empty() {
        return Err(DatasetError::EmptyAfterFilter);
    }

    let users: Vec<String> = alive
        .iter()
        .map(|r| r.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let loc_ids: Vec<String> = alive
        .iter()
        .map(|r| r.loc_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let categories: Vec<String> = alive
        .iter()
        .map(|r| r.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let user_index: BTreeMap<&str, u32> = users
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let loc_index: BTreeMap<&str, u32> = loc_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let cat_index: BTreeMap<&str, u32> = categories
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();

    let mut indexed: Vec<IndexedRecord> = alive
        .iter()
        .map(|r| IndexedRecord {
            user: user_index[r.user_id.as_str()],
            loc: loc_index[r.loc_id.as_str()],
            cat: cat_index[r.category.as_str()],
            timestamp: r.timestamp,
        })
        .collect();
    // Canonical order makes every downstream step permutation-invariant.
    indexed.sort_by_key(|r| (r.user, r.timestamp, r.loc));

    let mut locations: Vec<Option<LocationMeta>> = alloc::vec![None; loc_ids.len()];
    let mut visit_counts = alloc::vec![0u64; loc_ids.len()];
    // Metadata comes from each location's first canonical record, so we
    // pair indexed records with their sources in the same order.
    let mut sources: Vec<&CheckinRecord> = alive.clone();
    sources.sort_by_key(|r| {
        (
            user_index[r.user_id.as_str()],
            r.timestamp,
            loc_index[r.loc_id.as_str()],
        )
    });
    for (rec, src) in indexed.iter().zip(&sources) {
        visit_counts[rec.loc as usize] += 1;
        let slot = &mut locations[rec.loc as usize];
        if slot.is_none() {
            *slot = Some(LocationMeta {
                id: src.loc_id.clone(),
                lat: src.lat,
                lon: src.lon,
                category: rec.cat,
            });
        }
    }
    let locations = locations
        .into_iter()
        .map(|m| m.expect("every location visited"))
        .collect();

    Ok(CheckinDataset {
        users,
        locations,
        categories,
        records: indexed,
        visit_counts,
        trajectories: Vec::new(),
        splits: Vec::new(),
        head_mask: Vec::new(),
    })
}

impl CheckinDataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    /// Reconstruct raw records (canonical order); feeding these back
    /// through [`filter_and_index`] reproduces this dataset.
    pub fn to_records(&self) -> Vec<CheckinRecord> {
        self.records
            .iter()
            .map(|r| {
                let loc = &self.locations[r.loc as usize];
                CheckinRecord {
                    user_id: self.users[r.user as usize].clone(),
                    loc_id: loc.id.clone(),
                    lat: loc.lat,
                    lon: loc.lon,
                    category: self.categories[r.cat as usize].clone(),
                    timestamp: r.timestamp,
                }
            })
            .collect()
    }

    /// Cut each user's stream into 24-hour windows anchored at the
    /// window's first check-in; windows with fewer than two points are
    /// discarded.
    pub fn segment_trajectories(&mut self) {
        self.trajectories.clear();
        self.splits.clear();
        let mut i = 0;
        while i < self.records.len() {
            let user = self.records[i].user;
            let mut window: Vec<TrajectoryPoint> = Vec::new();
            let mut anchor = self.records[i].timestamp;
            while i < self.records.len() && self.records[i].user == user {
                let r = self.records[i];
                if r.timestamp - anchor >= SECONDS_PER_DAY {
                    if window.len() >= 2 {
                        self.trajectories.push(Trajectory {
                            user,
                            points: core::mem::take(&mut window),
                        });
                    } else {
                        window.clear();
                    }
                    anchor = r.timestamp;
                }
                window.push(TrajectoryPoint {
                    loc: r.loc,
                    cat: r.cat,
                    timestamp: r.timestamp,
                });
                i += 1;
            }
            if window.len() >= 2 {
                self.trajectories.push(Trajectory {
                    user,
                    points: window,
                });
            }
        }
    }

    /// Tag each user's trajectories 8:1:1 in time order, then drop
    /// val/test trajectories touching users or locations absent from
    /// train. Dropping never feeds back into counts or filtering.
    pub fn chronological_split(&mut self) {
        let n = self.trajectories.len();
        let mut tags = alloc::vec![SplitTag::Test; n];
        let mut start = 0;
        while start < n {
            let user = self.trajectories[start].user;
            let mut end = start;
            while end < n && self.trajectories[end].user == user {
                end += 1;
            }
            let count = end - start;
            let train = 4 * count / 5; // floor(0.8 n)
            let val = count / 10; // floor(0.1 n)
            for (offset, tag) in tags[start..end].iter_mut().enumerate() {
                *tag = if offset < train {
                    SplitTag::Train
                } else if offset < train + val {
                    SplitTag::Val
                } else {
                    SplitTag::Test
                };
            }
            start = end;
        }

        let mut train_users = alloc::vec![false; self.users.len()];
        let mut train_locs = alloc::vec![false; self.locations.len()];
        for (traj, tag) in self.trajectories.iter().zip(&tags) {
            if *tag == SplitTag::Train {
                train_users[traj.user as usize] = true;
                for p in &traj.points {
                    train_locs[p.loc as usize] = true;
                }
            }
        }
        let keep: Vec<bool> = self
            .trajectories
            .iter()
            .zip(&tags)
            .map(|(traj, tag)| {
                *tag == SplitTag::Train
                    || (train_users[traj.user as usize]
                        && traj.points.iter().all(|p| train_locs[p.loc as usize]))
            })
            .collect();
        let mut kept_trajectories = Vec::with_capacity(n);
        let mut kept_tags = Vec::with_capacity(n);
        for ((traj, tag), keep) in self.trajectories.drain(..).zip(tags).zip(keep) {
            if keep {
                kept_trajectories.push(traj);
                kept_tags.push(tag);
            }
        }
        self.trajectories = kept_trajectories;
        self.splits = kept_tags;
    }

    /// Mark the top 20% of locations by visit count (ties to the smaller
    /// index) as the head group. Counts cover the full filtered record
    /// set, before any split.
    pub fn partition_head_tail(&mut self) {
        let p = self.locations.len();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by_key(|&i| (core::cmp::Reverse(self.visit_counts[i]), i));
        let head_count = p.div_ceil(5); // ceil(0.2 p)
        self.head_mask = alloc::vec![false; p];
        for &i in &order[..head_count] {
            self.head_mask[i] = true;
        }
    }

    /// Expand trajectories with the given tag into (prefix, next) pairs.
    pub fn samples(&self, tag: SplitTag) -> Vec<Sample> {
        let mut out = Vec::new();
        for (traj, t) in self.trajectories.iter().zip(&self.splits) {
            if *t != tag {
                continue;
            }
            let locs: Vec<u32> = traj.points.iter().map(|p| p.loc).collect();
            for cut in 1..locs.len() {
                out.push(Sample {
                    user: traj.user,
                    prefix: locs[..cut].to_vec(),
                    target: locs[cut],
                });
            }
        }
        out
    }

    pub fn stats(&self) -> DatasetStats {
        let count_tag = |tag| self.splits.iter().filter(|&&t| t == tag).count() as u64;
        DatasetStats {
            records: self.records.len() as u64,
            users: self.users.len() as u64,
            locations: self.locations.len() as u64,
            trajectories: self.trajectories.len() as u64,
            train_trajectories: count_tag(SplitTag::Train),
            val_trajectories: count_tag(SplitTag::Val),
            test_trajectories: count_tag(SplitTag::Test),
            head_locations: self.head_mask.iter().filter(|&&h| h).count() as u64,
        }
    }
}
