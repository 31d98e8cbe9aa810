//! Synthetic long-tailed check-in corpora with a known ground-truth
//! hierarchy.
//!
//! [`generate_hierarchy`] builds a random four-level tree at the
//! configured branching; every parent is guaranteed at least one child,
//! so realized class counts equal the configured sizes. Names are
//! zero-padded (`loc_0042`), which makes lexicographic order equal
//! numeric order and keeps generator indices aligned with the dense
//! indices the ingest pipeline assigns.
//!
//! [`generate_checkins`] draws each user's visits from a Zipf(s) law
//! over locations (inverse-CDF over a precomputed table), mixed with a
//! per-user preference: with probability `need_bias` the draw is
//! restricted to the user's preferred need subtree and renormalized.
//! The bias plants coarse-level signal a hierarchical loss can exploit;
//! the Zipf law supplies the long tail. Timestamps are uniform over the
//! day span, coordinates fixed per location inside a unit box.
//!
//! Everything is a pure function of (config, rng state): same seed,
//! same corpus, byte for byte.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{CheckinRecord, SECONDS_PER_DAY};
use crate::hierarchy::{HierarchyError, LabelHierarchy, LevelMapping, NodeId};

#[derive(Clone, Debug, PartialEq)]
pub enum SynthError {
    InfeasibleConfig { reason: &'static str },
    BadHierarchy(HierarchyError),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InfeasibleConfig { reason } => write!(f, "infeasible config: {reason}"),
            Self::BadHierarchy(e) => write!(f, "generated hierarchy invalid: {e}"),
        }
    }
}

impl core::error::Error for SynthError {}

impl From<HierarchyError> for SynthError {
    fn from(e: HierarchyError) -> Self {
        Self::BadHierarchy(e)
    }
}

/// Generator parameters. Defaults match the reference benchmark.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_locations: usize,
    pub n_categories: usize,
    pub n_activities: usize,
    pub n_needs: usize,
    /// Zipf exponent s > 0; larger = heavier head.
    pub zipf_exponent: f64,
    /// Probability a visit is drawn from the user's preferred need
    /// subtree instead of the global law.
    pub need_bias: f64,
    /// Check-ins per user, drawn uniformly from this inclusive range.
    pub checkins_min: usize,
    pub checkins_max: usize,
    /// Timestamps are uniform over this many days.
    pub days: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_locations: 2000,
            n_categories: 150,
            n_activities: 10,
            n_needs: 3,
            zipf_exponent: 1.1,
            need_bias: 0.7,
            checkins_min: 110,
            checkins_max: 160,
            days: 30,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |reason| Err(SynthError::InfeasibleConfig { reason });
        if self.n_needs == 0 || self.n_users == 0 {
            return err("need at least one need class and one user");
        }
        if self.n_needs > self.n_activities
            || self.n_activities > self.n_categories
            || self.n_categories > self.n_locations
        {
            return err("level sizes must be non-decreasing coarse to fine");
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent <= 0.0 {
            return err("zipf exponent must be positive");
        }
        if !(0.0..=1.0).contains(&self.need_bias) {
            return err("need bias must lie in [0, 1]");
        }
        if self.checkins_min == 0 || self.checkins_min > self.checkins_max {
            return err("check-in range must be nonempty and positive");
        }
        if self.days == 0 {
            return err("day span must be at least 1");
        }
        Ok(())
    }

    /// Level sizes coarse to fine.
    pub fn level_sizes(&self) -> [usize; 4] {
        [
            self.n_needs,
            self.n_activities,
            self.n_categories,
            self.n_locations,
        ]
    }
}

fn pad_width(count: usize) -> usize {
    let mut width = 1;
    let mut max = count.saturating_sub(1);
    while max >= 10 {
        width += 1;
        max /= 10;
    }
    width
}

fn level_name(prefix: &str, index: usize, count: usize) -> String {
    format!("{prefix}_{index:0width$}", width = pad_width(count))
}

const LEVEL_PREFIXES: [&str; 4] = ["need", "activity", "category", "loc"];

/// Random child-to-parent assignments between adjacent levels, finest
/// pair first (the order the hierarchy builder expects). The first
/// `parents` children take one parent each so none is left empty; the
/// rest draw uniformly.
pub fn random_tree<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Vec<LevelMapping> {
    let mut mappings = Vec::new();
    for parent_idx in (0..sizes.len() - 1).rev() {
        let child_idx = parent_idx + 1;
        let (parents, children) = (sizes[parent_idx], sizes[child_idx]);
        let mapping = (0..children)
            .map(|c| {
                let p = if c < parents {
                    c
                } else {
                    rng.gen_range(0..parents)
                };
                (
                    level_name(LEVEL_PREFIXES[child_idx], c, children),
                    level_name(LEVEL_PREFIXES[parent_idx], p, parents),
                )
            })
            .collect();
        mappings.push(mapping);
    }
    mappings
}

/// Build the tree and return it with its adjacency lists (the mapping
/// files' content).
pub fn generate_hierarchy<R: Rng + ?Sized>(
    config: &SynthConfig,
    rng: &mut R,
) -> Result<(LabelHierarchy, Vec<LevelMapping>), SynthError> {
    config.validate()?;
    let adjacencies = random_tree(&config.level_sizes(), rng);
    let hierarchy = LabelHierarchy::build(&adjacencies)?;
    Ok((hierarchy, adjacencies))
}

/// Inverse-CDF table over Zipf ranks, with optional restriction to a
/// subset of locations.
struct ZipfTable {
    /// Locations in draw order, parallel to `cumulative`.
    locs: Vec<u32>,
    cumulative: Vec<f64>,
}

impl ZipfTable {
    /// `members` are location indices; `loc_rank[l]` is l's global Zipf
    /// rank (0 = most popular).
    fn new(members: &[u32], loc_rank: &[u32], exponent: f64) -> Self {
        let mut locs = members.to_vec();
        locs.sort_by_key(|&l| loc_rank[l as usize]);
        let mut cumulative = Vec::with_capacity(locs.len());
        let mut total = 0.0;
        for &l in &locs {
            let rank = loc_rank[l as usize] as f64 + 1.0;
            total += libm::pow(rank, -exponent);
            cumulative.push(total);
        }
        Self { locs, cumulative }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let total = *self.cumulative.last().expect("nonempty table");
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.locs[idx.min(self.locs.len() - 1)]
    }
}

/// Draw the full corpus. Records come out user-major in generation
/// order; the ingest pipeline re-sorts canonically anyway.
pub fn generate_checkins<R: Rng + ?Sized>(
    config: &SynthConfig,
    hierarchy: &LabelHierarchy,
    rng: &mut R,
) -> Result<Vec<CheckinRecord>, SynthError> {
    config.validate()?;
    if hierarchy.num_leaves() != config.n_locations
        || hierarchy.depth() != 4
        || hierarchy.class_counts() != config.level_sizes()
    {
        return Err(SynthError::InfeasibleConfig {
            reason: "hierarchy does not match the configured level sizes",
        });
    }
    let n = config.n_locations;

    // Fixed per-location coordinates in the unit city box.
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();

    // Popularity rank -> location via a seeded shuffle, so rank is
    // independent of the tree structure.
    let mut rank_to_loc: Vec<u32> = (0..n as u32).collect();
    rank_to_loc.shuffle(rng);
    let mut loc_rank = alloc::vec![0u32; n];
    for (rank, &l) in rank_to_loc.iter().enumerate() {
        loc_rank[l as usize] = rank as u32;
    }

    let all: Vec<u32> = (0..n as u32).collect();
    let global = ZipfTable::new(&all, &loc_rank, config.zipf_exponent);
    let per_need: Vec<ZipfTable> = (0..config.n_needs)
        .map(|need| {
            let members = hierarchy
                .leaves_of(NodeId {
                    level: 1,
                    index: need,
                })
                .expect("need in range");
            ZipfTable::new(members, &loc_rank, config.zipf_exponent)
        })
        .collect();

    let category_level = hierarchy.depth() - 1;
    let span = config.days as i64 * SECONDS_PER_DAY;
    let user_width = pad_width(config.n_users);
    let mut out = Vec::new();
    for user in 0..config.n_users {
        let user_id = format!("user_{user:0user_width$}");
        let preferred = rng.gen_range(0..config.n_needs);
        let count = rng.gen_range(config.checkins_min..=config.checkins_max);
        for _ in 0..count {
            let biased = rng.gen::<f64>() < config.need_bias;
            let loc = if biased {
                per_need[preferred].draw(rng)
            } else {
                global.draw(rng)
            };
            let timestamp = rng.gen_range(0..span);
            let cat = hierarchy
                .ancestor_at(loc as usize, category_level)
                .expect("valid leaf");
            let leaf = NodeId {
                level: hierarchy.depth(),
                index: loc as usize,
            };
            let (lat, lon) = coords[loc as usize];
            out.push(CheckinRecord {
                user_id: user_id.clone(),
                loc_id: String::from(hierarchy.class_name(leaf).expect("valid node")),
                lat,
                lon,
                category: String::from(hierarchy.class_name(cat).expect("valid node")),
                timestamp,
            });
        }
    }
    Ok(out)
}
