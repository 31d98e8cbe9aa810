//! Ranking evaluation: MRR@k and NDCG@k with head/tail group breakdowns
//! and hierarchical distance statistics.
//!
//! The primitive is the 1-based rank of the true leaf in a score vector,
//! with ties broken by ascending index (the order a stable descending
//! sort would produce). Both truncated metrics consume only that rank.
//! Group membership (head or tail) is decided by the true next location,
//! never the predicted one. [`EvalTally`] accumulates per-prediction
//! contributions and merges associatively, so callers may shard a split
//! across threads and combine partial tallies deterministically.
//! Averages are per-prediction, not per-user.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::Sample;
use crate::hierarchy::LabelHierarchy;

/// Cutoffs reported by default.
pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    InvalidLeaf {
        index: usize,
        len: usize,
    },
    EmptySplit,
    LengthMismatch {
        expected: usize,
        got: usize,
    },
    /// Attempt to merge tallies built with different cutoffs or depths.
    TallyMismatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidLeaf { index, len } => {
                write!(f, "true leaf {index} out of range for {len} scores")
            }
            Self::EmptySplit => write!(f, "evaluation split is empty"),
            Self::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} entries, got {got}")
            }
            Self::TallyMismatch => write!(f, "tallies have different cutoffs or depth"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// 1-based rank of the true leaf: one plus the number of strictly higher
/// scores plus equal scores at smaller indices.
pub fn rank_of_true(scores: &[f64], true_leaf: usize) -> Result<usize, MetricsError> {
    if true_leaf >= scores.len() {
        return Err(MetricsError::InvalidLeaf {
            index: true_leaf,
            len: scores.len(),
        });
    }
    let target = scores[true_leaf];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if s > target || (s == target && j < true_leaf) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// `1/rank` when the true leaf makes the cutoff, else zero.
pub fn mrr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// `1/log2(1 + rank)` when the true leaf makes the cutoff, else zero.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / libm::log2(1.0 + rank as f64)
    } else {
        0.0
    }
}

/// Rank plus the k best-scoring leaves in descending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedPrediction {
    pub true_leaf: usize,
    pub rank: usize,
    pub top_k_leaves: Vec<usize>,
}

/// Full ranked view of one prediction; `rank <= k` exactly when the true
/// leaf appears in `top_k_leaves`.
pub fn ranked_prediction(
    scores: &[f64],
    true_leaf: usize,
    k: usize,
) -> Result<RankedPrediction, MetricsError> {
    let rank = rank_of_true(scores, true_leaf)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).expect("finite scores"));
    order.truncate(k);
    Ok(RankedPrediction {
        true_leaf,
        rank,
        top_k_leaves: order,
    })
}

/// Anything that can score every location given a visit prefix.
pub trait Scorer {
    /// One score per leaf, higher = more likely next location.
    fn score(&self, sample: &Sample) -> Vec<f64>;
}

const TOTAL: usize = 0;
const HEAD: usize = 1;
const TAIL: usize = 2;

/// Associative accumulator of per-prediction metric contributions.
#[derive(Clone, Debug)]
pub struct EvalTally {
    ks: Vec<usize>,
    depth: usize,
    counts: [u64; 3],
    mrr_sums: Vec<[f64; 3]>,
    ndcg_sums: Vec<[f64; 3]>,
    dist_sum: f64,
    /// Distance histogram, index = distance in `0..=depth`.
    hist: Vec<u64>,
    /// `level_hits[h - 1]` = predictions whose LCA depth with truth >= h.
    level_hits: Vec<u64>,
}

impl EvalTally {
    pub fn new(ks: &[usize], depth: usize) -> Self {
        Self {
            ks: ks.to_vec(),
            depth,
            counts: [0; 3],
            mrr_sums: alloc::vec![[0.0; 3]; ks.len()],
            ndcg_sums: alloc::vec![[0.0; 3]; ks.len()],
            dist_sum: 0.0,
            hist: alloc::vec![0; depth + 1],
            level_hits: alloc::vec![0; depth],
        }
    }

    /// Fold in one prediction. `head[leaf]` marks head-group locations.
    pub fn record(
        &mut self,
        scores: &[f64],
        true_leaf: usize,
        hierarchy: &LabelHierarchy,
        head: &[bool],
    ) -> Result<(), MetricsError> {
        if scores.len() != hierarchy.num_leaves() || head.len() != hierarchy.num_leaves() {
            return Err(MetricsError::LengthMismatch {
                expected: hierarchy.num_leaves(),
                got: scores.len(),
            });
        }
        let rank = rank_of_true(scores, true_leaf)?;
        // First index attaining the max = the rank-1 leaf under the tie rule.
        let mut top1 = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[top1] {
                top1 = j;
            }
        }
        let (_, lca_depth) = hierarchy
            .lowest_common_ancestor(true_leaf, top1)
            .expect("leaves in range");
        let distance = self.depth - lca_depth;
        self.dist_sum += distance as f64;
        self.hist[distance] += 1;
        for h in 0..lca_depth.min(self.depth) {
            self.level_hits[h] += 1;
        }

        let group = if head[true_leaf] { HEAD } else { TAIL };
        self.counts[TOTAL] += 1;
        self.counts[group] += 1;
        for (i, &k) in self.ks.iter().enumerate() {
            let m = mrr_at_k(rank, k);
            let n = ndcg_at_k(rank, k);
            self.mrr_sums[i][TOTAL] += m;
            self.mrr_sums[i][group] += m;
            self.ndcg_sums[i][TOTAL] += n;
            self.ndcg_sums[i][group] += n;
        }
        Ok(())
    }

    /// Combine a partial tally produced with identical settings.
    pub fn merge(&mut self, other: &EvalTally) -> Result<(), MetricsError> {
        if self.ks != other.ks || self.depth != other.depth {
            return Err(MetricsError::TallyMismatch);
        }
        for g in 0..3 {
            self.counts[g] += other.counts[g];
        }
        for i in 0..self.ks.len() {
            for g in 0..3 {
                self.mrr_sums[i][g] += other.mrr_sums[i][g];
                self.ndcg_sums[i][g] += other.ndcg_sums[i][g];
            }
        }
        self.dist_sum += other.dist_sum;
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        for (a, b) in self.level_hits.iter_mut().zip(&other.level_hits) {
            *a += b;
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<EvalReport, MetricsError> {
        if self.counts[TOTAL] == 0 {
            return Err(MetricsError::EmptySplit);
        }
        let mean = |sums: &[f64; 3], g: usize| {
            if self.counts[g] == 0 {
                0.0
            } else {
                sums[g] / self.counts[g] as f64
            }
        };
        let mut mrr = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for (i, &k) in self.ks.iter().enumerate() {
            mrr.insert(
                k,
                GroupValues {
                    total: mean(&self.mrr_sums[i], TOTAL),
                    head: mean(&self.mrr_sums[i], HEAD),
                    tail: mean(&self.mrr_sums[i], TAIL),
                },
            );
            ndcg.insert(
                k,
                GroupValues {
                    total: mean(&self.ndcg_sums[i], TOTAL),
                    head: mean(&self.ndcg_sums[i], HEAD),
                    tail: mean(&self.ndcg_sums[i], TAIL),
                },
            );
        }
        let n = self.counts[TOTAL] as f64;
        Ok(EvalReport {
            ks: self.ks.clone(),
            mrr,
            ndcg,
            counts: GroupCounts {
                total: self.counts[TOTAL],
                head: self.counts[HEAD],
                tail: self.counts[TAIL],
            },
            hier: HierDistanceStats {
                mean_distance: self.dist_sum / n,
                histogram: self.hist.clone(),
                level_match_rate: self
                    .level_hits
                    .iter()
                    .map(|&hits| hits as f64 / n)
                    .collect(),
            },
        })
    }
}

/// One metric value per evaluation group.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupValues {
    pub total: f64,
    pub head: f64,
    pub tail: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupCounts {
    pub total: u64,
    pub head: u64,
    pub tail: u64,
}

/// Distance between truth and the top-1 prediction, summarized three
/// ways: mean, histogram over `0..=H`, and per-level match rates
/// (fraction of predictions sharing the level-h ancestor with truth).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HierDistanceStats {
    pub mean_distance: f64,
    pub histogram: Vec<u64>,
    pub level_match_rate: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub mrr: BTreeMap<usize, GroupValues>,
    pub ndcg: BTreeMap<usize, GroupValues>,
    pub counts: GroupCounts,
    pub hier: HierDistanceStats,
}

/// Score and tally every sample in a split serially. Parallel callers
/// shard the samples, run one [`EvalTally`] each, then merge.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    samples: &[Sample],
    hierarchy: &LabelHierarchy,
    head: &[bool],
    ks: &[usize],
) -> Result<EvalReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let mut tally = EvalTally::new(ks, hierarchy.depth());
    for sample in samples {
        let scores = scorer.score(sample);
        tally.record(&scores, sample.target as usize, hierarchy, head)?;
    }
    tally.finalize()
}
