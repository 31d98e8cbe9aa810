//! The adaptive hierarchical loss engine.
//!
//! A backbone produces logits over locations (the tree's leaves). From
//! there:
//!
//! 1. [`gumbel_softmax`] turns logits plus optional Gumbel noise into leaf
//!    probabilities at temperature `tau`.
//! 2. [`LeafDistribution::aggregate_levels`] rolls leaf mass up the tree,
//!    one transition map per level, so each parent holds the sum of its
//!    children.
//! 3. [`conditional_path_probs`] extracts, for a given true leaf, the
//!    ancestor masses `S^0..S^H` and the per-level conditionals
//!    `S^h / S^{h-1}`. Their product telescopes back to the leaf
//!    probability.
//! 4. [`ahl_forward`] / [`ahl_backward`] evaluate the weighted sum of
//!    negative log conditionals along the true path and its closed-form
//!    gradients with respect to both the logits and the weight
//!    parameters. With all weights equal to one the loss collapses to
//!    cross-entropy on the leaves.
//!
//! Per-node weights are kept positive through a Softplus
//! reparameterization ([`AdaptiveWeights`]); only the `H` ancestors of a
//! sample's true leaf receive weight gradients.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::hierarchy::{LabelHierarchy, NodeId};

/// Floor applied inside logarithms and gradient denominators so a starved
/// branch yields a large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

/// Below this an ancestor mass is treated as true underflow and reported
/// as an error rather than clamped.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub enum LossError {
    NonPositiveTau {
        tau: f64,
    },
    /// Logits and noise vectors disagree in length.
    LengthMismatch {
        logits: usize,
        noise: usize,
    },
    /// Distribution size does not match the hierarchy's leaf count.
    HierarchyMismatch {
        leaves: usize,
        probs: usize,
    },
    /// Level probabilities were not aggregated before a path query.
    NotAggregated,
    LeafOutOfRange {
        index: usize,
        len: usize,
    },
    /// An ancestor mass underflowed to (effectively) zero.
    DegenerateParent {
        level: usize,
    },
    /// More than one ablation flag was set.
    ConflictingFlags,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveTau { tau } => write!(f, "temperature must be positive, got {tau}"),
            Self::LengthMismatch { logits, noise } => {
                write!(f, "logits length {logits} != noise length {noise}")
            }
            Self::HierarchyMismatch { leaves, probs } => {
                write!(
                    f,
                    "hierarchy has {leaves} leaves but distribution has {probs}"
                )
            }
            Self::NotAggregated => write!(f, "level probabilities not aggregated"),
            Self::LeafOutOfRange { index, len } => {
                write!(f, "leaf index {index} out of range for {len} leaves")
            }
            Self::DegenerateParent { level } => {
                write!(f, "ancestor mass underflowed at level {level}")
            }
            Self::ConflictingFlags => write!(f, "at most one ablation flag may be set"),
        }
    }
}

impl core::error::Error for LossError {}

/// Map a uniform draw in (0, 1) to a standard Gumbel variate.
#[inline]
pub fn gumbel_from_uniform(a: f64) -> f64 {
    -libm::log(-libm::log(a))
}

/// Draw `count` standard Gumbel samples. Same seed, same vector.
pub fn sample_gumbel<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a: f64 = rng.gen(); // [0, 1)
        if a > 0.0 {
            out.push(gumbel_from_uniform(a));
        }
    }
    out
}

/// Leaf probabilities plus their per-level aggregates.
#[derive(Clone, Debug)]
pub struct LeafDistribution {
    probs: Vec<f64>,
    tau: f64,
    noise: Vec<f64>,
    /// `level_probs[h - 1]` = distribution over level-`h` classes; the
    /// final entry mirrors `probs`. Empty until aggregated.
    level_probs: Vec<Vec<f64>>,
}

/// Temperature softmax of `(z + g) / tau` with max subtraction.
///
/// With zero noise and `tau = 1` this is a plain softmax.
pub fn gumbel_softmax(
    logits: &[f64],
    tau: f64,
    noise: &[f64],
) -> Result<LeafDistribution, LossError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(LossError::NonPositiveTau { tau });
    }
    if logits.len() != noise.len() {
        return Err(LossError::LengthMismatch {
            logits: logits.len(),
            noise: noise.len(),
        });
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(z, g)| (z + g) / tau)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scaled.iter().map(|&a| libm::exp(a - max)).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(LeafDistribution {
        probs,
        tau,
        noise: noise.to_vec(),
        level_probs: Vec::new(),
    })
}

impl LeafDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn is_aggregated(&self) -> bool {
        !self.level_probs.is_empty()
    }

    /// Distribution over level-`h` classes (`h` in `1..=H`).
    pub fn level_probs(&self, h: usize) -> Result<&[f64], LossError> {
        if self.level_probs.is_empty() {
            return Err(LossError::NotAggregated);
        }
        Ok(&self.level_probs[h - 1])
    }

    /// Roll leaf mass bottom-up: each parent's probability is the sum of
    /// its children's, one adjacent-level transition at a time.
    pub fn aggregate_levels(&mut self, hierarchy: &LabelHierarchy) -> Result<(), LossError> {
        if hierarchy.num_leaves() != self.probs.len() {
            return Err(LossError::HierarchyMismatch {
                leaves: hierarchy.num_leaves(),
                probs: self.probs.len(),
            });
        }
        let depth = hierarchy.depth();
        let mut levels: Vec<Vec<f64>> = alloc::vec![Vec::new(); depth];
        levels[depth - 1] = self.probs.clone();
        for h in (2..=depth).rev() {
            let child_to_parent = &hierarchy.transition(h).child_to_parent;
            let mut coarse = alloc::vec![0.0; hierarchy.level(h - 1).class_count()];
            for (child, &parent) in child_to_parent.iter().enumerate() {
                coarse[parent as usize] += levels[h - 1][child];
            }
            levels[h - 2] = coarse;
        }
        self.level_probs = levels;
        Ok(())
    }
}

/// Ancestor masses and conditionals along one leaf's root path.
#[derive(Clone, Debug)]
pub struct PathConditionals {
    /// `S^0..S^H`; `S^0 = 1`, `S^H` is the leaf probability.
    pub s_sums: Vec<f64>,
    /// `p(y^h | y^{h-1}) = S^h / S^{h-1}` for `h` in `1..=H`.
    pub conds: Vec<f64>,
}

/// Extract `S^0..S^H` and the per-level conditionals for `true_leaf`.
pub fn conditional_path_probs(
    dist: &LeafDistribution,
    hierarchy: &LabelHierarchy,
    true_leaf: usize,
) -> Result<PathConditionals, LossError> {
    if !dist.is_aggregated() {
        return Err(LossError::NotAggregated);
    }
    if true_leaf >= dist.probs.len() {
        return Err(LossError::LeafOutOfRange {
            index: true_leaf,
            len: dist.probs.len(),
        });
    }
    let depth = hierarchy.depth();
    let path = hierarchy
        .ancestor_path(true_leaf)
        .map_err(|_| LossError::LeafOutOfRange {
            index: true_leaf,
            len: dist.probs.len(),
        })?;
    let mut s_sums = Vec::with_capacity(depth + 1);
    s_sums.push(1.0);
    for h in 1..=depth {
        // Summation rounds upward, so a node holding nearly all mass
        // can aggregate to 1 + 1ulp; cap it so S^0 >= S^1 >= ... holds
        // exactly.
        s_sums.push(dist.level_probs[h - 1][path[h - 1] as usize].min(1.0));
    }
    for (h, s) in s_sums.iter().enumerate().skip(1).take(depth - 1) {
        if *s < UNDERFLOW_FLOOR {
            return Err(LossError::DegenerateParent { level: h });
        }
    }
    let conds = (1..=depth)
        .map(|h| s_sums[h] / s_sums[h - 1].max(UNDERFLOW_FLOOR))
        .collect();
    Ok(PathConditionals { s_sums, conds })
}

/// Per-node weight parameters behind a Softplus, so every effective
/// weight is strictly positive however far training pushes `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveWeights {
    /// `theta[level - 1][class]`, levels `1..=H`.
    theta: Vec<Vec<f64>>,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `softplus(theta) = c` solved for theta.
#[inline]
pub fn inverse_softplus(c: f64) -> f64 {
    libm::log(libm::expm1(c))
}

impl AdaptiveWeights {
    /// Initial weight value for `level` in a tree of `depth` levels:
    /// 1.0 at the leaves stepping down 0.25 per coarser level, floored at
    /// 0.25. For depth 4 this is exactly {0.25, 0.5, 0.75, 1.0} coarse to
    /// fine.
    pub fn level_init_value(depth: usize, level: usize) -> f64 {
        let steps = (depth - level) as f64;
        (1.0 - 0.25 * steps).max(0.25)
    }

    /// One theta per hierarchy node, initialized so the effective weight
    /// equals the level constant.
    pub fn level_constant_init(hierarchy: &LabelHierarchy) -> Self {
        let depth = hierarchy.depth();
        let theta = (1..=depth)
            .map(|h| {
                let t = inverse_softplus(Self::level_init_value(depth, h));
                alloc::vec![t; hierarchy.level(h).class_count()]
            })
            .collect();
        Self { theta }
    }

    pub fn from_theta(theta: Vec<Vec<f64>>) -> Self {
        Self { theta }
    }

    pub fn theta(&self, node: NodeId) -> f64 {
        self.theta[node.level - 1][node.index]
    }

    pub fn theta_levels(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn theta_levels_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.theta
    }

    /// Effective (positive) weight of a node.
    pub fn weight(&self, node: NodeId) -> f64 {
        softplus(self.theta(node))
    }

    /// `w^1..w^H` along a leaf's root path.
    pub fn path_weights(&self, hierarchy: &LabelHierarchy, leaf: usize) -> Vec<f64> {
        let path = hierarchy.ancestor_path(leaf).expect("valid leaf");
        path.iter()
            .enumerate()
            .map(|(h, &class)| softplus(self.theta[h][class as usize]))
            .collect()
    }
}

/// Loss value with gradients for the logits and the (sparse) weight
/// parameters touched by this sample.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    /// Exactly the `H` true-path ancestors, in level order 1..=H.
    pub grad_theta: Vec<(NodeId, f64)>,
}

/// Weighted negative log conditionals along the true path, averaged over
/// levels: `-(1/H) * sum_h w^h log(S^h / S^{h-1})`.
pub fn ahl_forward(
    dist: &LeafDistribution,
    weights: &AdaptiveWeights,
    hierarchy: &LabelHierarchy,
    true_leaf: usize,
) -> Result<f64, LossError> {
    let path = conditional_path_probs(dist, hierarchy, true_leaf)?;
    let w = weights.path_weights(hierarchy, true_leaf);
    let depth = hierarchy.depth();
    let mut acc = 0.0;
    for (wh, cond) in w.iter().zip(&path.conds) {
        acc += wh * libm::log(cond.max(PROB_FLOOR));
    }
    Ok(-acc / depth as f64)
}

/// Forward value plus closed-form gradients.
///
/// For every logit `j` the gradient assembles the on-path and off-path
/// derivative cases of the ancestor masses: with `d(j)` the depth of the
/// lowest common ancestor of leaf `j` and the true leaf,
///
/// ```text
/// d loss/d z_j = p0(j) / (tau * H) * (w^1 + sum_{h<=d(j)} c_h / S^h)
/// c_h = w^{h+1} - w^h   (h < H),   c_H = -w^H
/// ```
///
/// which for the true leaf reduces to `(p0 * A - w^H) / (tau * H)` with
/// `A = sum_{h=1}^{H-1} (w^{h+1} - w^h)/S^h + w^1`. Weight gradients are
/// `-(1/H) log(S^h/S^{h-1}) * logistic(theta)` on the true path only.
pub fn ahl_backward(
    dist: &LeafDistribution,
    weights: &AdaptiveWeights,
    hierarchy: &LabelHierarchy,
    true_leaf: usize,
) -> Result<LossOutput, LossError> {
    let path = conditional_path_probs(dist, hierarchy, true_leaf)?;
    let w = weights.path_weights(hierarchy, true_leaf);
    let depth = hierarchy.depth();
    let inv_h = 1.0 / depth as f64;

    let mut value = 0.0;
    for (wh, cond) in w.iter().zip(&path.conds) {
        value -= wh * libm::log(cond.max(PROB_FLOOR));
    }
    value *= inv_h;

    // Prefix sums over the level coefficients: prefix[d] covers levels
    // 1..=d, so a leaf diverging from the true path below depth d picks
    // up exactly the shared-ancestor terms.
    let mut coeff = alloc::vec![0.0; depth];
    for h in 1..depth {
        coeff[h - 1] = (w[h] - w[h - 1]) / path.s_sums[h].max(PROB_FLOOR);
    }
    coeff[depth - 1] = -w[depth - 1] / path.s_sums[depth].max(PROB_FLOOR);
    let mut prefix = alloc::vec![0.0; depth + 1];
    for d in 1..=depth {
        prefix[d] = prefix[d - 1] + coeff[d - 1];
    }

    let true_path = hierarchy.ancestor_path(true_leaf).expect("valid leaf");
    let scale = inv_h / dist.tau;
    let mut grad_logits = alloc::vec![0.0; dist.probs.len()];
    for (j, g) in grad_logits.iter_mut().enumerate() {
        let other = hierarchy.ancestor_path(j).expect("valid leaf");
        let mut shared = 0;
        while shared < depth && true_path[shared] == other[shared] {
            shared += 1;
        }
        *g = dist.probs[j] * scale * (w[0] + prefix[shared]);
    }

    let grad_theta = (1..=depth)
        .map(|h| {
            let node = NodeId {
                level: h,
                index: true_path[h - 1] as usize,
            };
            let log_cond = libm::log(path.conds[h - 1].max(PROB_FLOOR));
            (node, -inv_h * log_cond * logistic(weights.theta(node)))
        })
        .collect();

    Ok(LossOutput {
        value,
        grad_logits,
        grad_theta,
    })
}

/// Leaf-level cross-entropy on the same distribution: value
/// `-log p0(true)`, logit gradient `(p0 - onehot) / tau`, no weight
/// gradients.
pub fn ce_forward_backward(
    dist: &LeafDistribution,
    true_leaf: usize,
) -> Result<LossOutput, LossError> {
    if true_leaf >= dist.probs.len() {
        return Err(LossError::LeafOutOfRange {
            index: true_leaf,
            len: dist.probs.len(),
        });
    }
    let value = -libm::log(dist.probs[true_leaf].max(PROB_FLOOR));
    let mut grad_logits: Vec<f64> = dist.probs.iter().map(|&p| p / dist.tau).collect();
    grad_logits[true_leaf] -= 1.0 / dist.tau;
    Ok(LossOutput {
        value,
        grad_logits,
        grad_theta: Vec::new(),
    })
}

/// Ablation switches; at most one may be set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationFlags {
    pub no_exploitation: bool,
    pub no_exploration: bool,
    pub no_gumbel: bool,
    pub no_adaptive: bool,
}

impl AblationFlags {
    pub fn count(&self) -> usize {
        [
            self.no_exploitation,
            self.no_exploration,
            self.no_gumbel,
            self.no_adaptive,
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }
}

/// Resolved loss behavior: which pieces of the full loss are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    /// Use the hierarchical loss (false = leaf cross-entropy).
    pub hierarchical: bool,
    /// Disturb logits with Gumbel noise during training.
    pub gumbel: bool,
    /// Learn the per-node weights (false = frozen at init).
    pub adaptive: bool,
}

impl LossConfig {
    /// The full loss: hierarchy, disturbance, learnable weights.
    pub fn ahl() -> Self {
        Self {
            hierarchical: true,
            gumbel: true,
            adaptive: true,
        }
    }

    /// Plain cross-entropy baseline, no disturbance.
    pub fn ce() -> Self {
        Self {
            hierarchical: false,
            gumbel: false,
            adaptive: false,
        }
    }
}

/// Translate ablation flags into a loss configuration.
pub fn ablation_config(flags: AblationFlags) -> Result<LossConfig, LossError> {
    if flags.count() > 1 {
        return Err(LossError::ConflictingFlags);
    }
    Ok(if flags.no_exploitation {
        // Drop the hierarchy, keep the disturbance.
        LossConfig {
            hierarchical: false,
            gumbel: true,
            adaptive: false,
        }
    } else if flags.no_exploration {
        // Keep the hierarchy, drop both exploration components.
        LossConfig {
            hierarchical: true,
            gumbel: false,
            adaptive: false,
        }
    } else if flags.no_gumbel {
        LossConfig {
            hierarchical: true,
            gumbel: false,
            adaptive: true,
        }
    } else if flags.no_adaptive {
        LossConfig {
            hierarchical: true,
            gumbel: true,
            adaptive: false,
        }
    } else {
        LossConfig::ahl()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::LabelHierarchy;
    use alloc::string::{String, ToString};
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter()
            .map(|(c, p)| (c.to_string(), p.to_string()))
            .collect()
    }

    /// Two leaves under a single parent (H = 2).
    fn two_leaf_tree() -> LabelHierarchy {
        LabelHierarchy::build(&[pairs(&[("la", "root_a"), ("lb", "root_a")])]).unwrap()
    }

    /// Three leaves, two parents (H = 2): {la, lb} | {lc}.
    fn three_leaf_tree() -> LabelHierarchy {
        LabelHierarchy::build(&[pairs(&[("la", "pa"), ("lb", "pa"), ("lc", "pb")])]).unwrap()
    }

    #[test]
    fn gumbel_analytic_points() {
        let e = libm::exp(1.0);
        assert!((gumbel_from_uniform(1.0 / e) - 0.0).abs() < 1e-12);
        assert!((gumbel_from_uniform(libm::exp(-e)) - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn gumbel_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(sample_gumbel(32, &mut a), sample_gumbel(32, &mut b));
    }

    #[test]
    fn softmax_closed_forms() {
        let ln2 = libm::log(2.0);
        let d = gumbel_softmax(&[ln2, 0.0], 1.0, &[0.0, 0.0]).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.probs()[1] - 1.0 / 3.0).abs() < 1e-12);
        // Halving tau doubles logit gaps.
        let d = gumbel_softmax(&[ln2, 0.0], 0.5, &[0.0, 0.0]).unwrap();
        assert!((d.probs()[0] - 0.8).abs() < 1e-12);
        assert!((d.probs()[1] - 0.2).abs() < 1e-12);
        // Uniform logits, zero noise.
        let d = gumbel_softmax(&[3.0; 5], 1.0, &[0.0; 5]).unwrap();
        for &p in d.probs() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_must_be_positive() {
        assert!(matches!(
            gumbel_softmax(&[0.0], 0.0, &[0.0]),
            Err(LossError::NonPositiveTau { .. })
        ));
        assert!(matches!(
            gumbel_softmax(&[0.0], -1.0, &[0.0]),
            Err(LossError::NonPositiveTau { .. })
        ));
    }

    #[test]
    fn aggregate_minimal_trees() {
        let h = two_leaf_tree();
        let mut d = gumbel_softmax(&[libm::log(0.3), libm::log(0.7)], 1.0, &[0.0, 0.0]).unwrap();
        d.aggregate_levels(&h).unwrap();
        assert!((d.level_probs(1).unwrap()[0] - 1.0).abs() < 1e-12);

        let h = three_leaf_tree();
        let logits: Vec<f64> = [0.2, 0.3, 0.5]
            .iter()
            .map(|&p: &f64| libm::log(p))
            .collect();
        let mut d = gumbel_softmax(&logits, 1.0, &[0.0; 3]).unwrap();
        d.aggregate_levels(&h).unwrap();
        let parents = d.level_probs(1).unwrap();
        assert!((parents[0] - 0.5).abs() < 1e-12);
        assert!((parents[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_size_mismatch() {
        let h = three_leaf_tree();
        let mut d = gumbel_softmax(&[0.0, 0.0], 1.0, &[0.0, 0.0]).unwrap();
        assert!(matches!(
            d.aggregate_levels(&h),
            Err(LossError::HierarchyMismatch { .. })
        ));
    }

    #[test]
    fn conditionals_telescope_to_leaf_prob() {
        let h = three_leaf_tree();
        let mut d = gumbel_softmax(&[0.4, -1.2, 2.0], 1.0, &[0.0; 3]).unwrap();
        d.aggregate_levels(&h).unwrap();
        for leaf in 0..3 {
            let path = conditional_path_probs(&d, &h, leaf).unwrap();
            let product: f64 = path.conds.iter().product();
            assert!((product - d.probs()[leaf]).abs() < 1e-12);
            assert!((path.s_sums[0] - 1.0).abs() < 1e-15);
            assert!((path.s_sums[2] - d.probs()[leaf]).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_parent_detected() {
        let h = three_leaf_tree();
        // All mass on lc; pa's subtree underflows to zero.
        let mut d = gumbel_softmax(&[-2000.0, -2000.0, 0.0], 1.0, &[0.0; 3]).unwrap();
        d.aggregate_levels(&h).unwrap();
        assert!(matches!(
            conditional_path_probs(&d, &h, 0),
            Err(LossError::DegenerateParent { level: 1 })
        ));
    }

    #[test]
    fn weights_init_matches_level_constants() {
        let h = LabelHierarchy::build(&[
            pairs(&[("l0", "c0"), ("l1", "c1")]),
            pairs(&[("c0", "a0"), ("c1", "a0")]),
            pairs(&[("a0", "n0")]),
        ])
        .unwrap();
        let w = AdaptiveWeights::level_constant_init(&h);
        let expect = [0.25, 0.5, 0.75, 1.0];
        for (level, &c) in expect.iter().enumerate() {
            let node = NodeId {
                level: level + 1,
                index: 0,
            };
            assert!((w.weight(node) - c).abs() < 1e-12, "level {}", level + 1);
        }
    }

    #[test]
    fn ahl_hand_value_two_level() {
        let h = two_leaf_tree();
        let mut d = gumbel_softmax(&[0.0, 0.0], 1.0, &[0.0, 0.0]).unwrap();
        d.aggregate_levels(&h).unwrap();
        let w = AdaptiveWeights::from_theta(alloc::vec![
            alloc::vec![inverse_softplus(0.25)],
            alloc::vec![inverse_softplus(1.0), inverse_softplus(1.0)],
        ]);
        let loss = ahl_forward(&d, &w, &h, 0).unwrap();
        // -(1/2) * (0.25 * ln 1 + 1 * ln 0.5)
        assert!((loss - 0.346_573_590_279_972_7).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_reduce_to_cross_entropy() {
        let h = three_leaf_tree();
        let mut d = gumbel_softmax(&[0.7, -0.4, 1.3], 1.0, &[0.0; 3]).unwrap();
        d.aggregate_levels(&h).unwrap();
        let unit = AdaptiveWeights::from_theta(
            h.class_counts()
                .iter()
                .map(|&c| alloc::vec![inverse_softplus(1.0); c])
                .collect(),
        );
        for leaf in 0..3 {
            let ahl = ahl_forward(&d, &unit, &h, leaf).unwrap();
            let ce = ce_forward_backward(&d, leaf).unwrap().value;
            assert!((ahl * h.depth() as f64 - ce).abs() < 1e-10);
            // Gradient degenerates to (p0 - onehot) / H.
            let out = ahl_backward(&d, &unit, &h, leaf).unwrap();
            for j in 0..3 {
                let expect = (d.probs()[j] - if j == leaf { 1.0 } else { 0.0 }) / 2.0;
                assert!((out.grad_logits[j] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn true_leaf_gradient_matches_coefficient_form() {
        let h = three_leaf_tree();
        let tau = 0.7;
        let mut d = gumbel_softmax(&[0.9, -1.1, 0.2], tau, &[0.15, -0.3, 0.05]).unwrap();
        d.aggregate_levels(&h).unwrap();
        let w = AdaptiveWeights::from_theta(alloc::vec![
            alloc::vec![0.3, -0.8],
            alloc::vec![0.1, 1.2, -0.4],
        ]);
        let leaf = 1;
        let out = ahl_backward(&d, &w, &h, leaf).unwrap();
        let path = conditional_path_probs(&d, &h, leaf).unwrap();
        let wp = w.path_weights(&h, leaf);
        let depth = h.depth() as f64;
        // A = sum_{h<H} (w^{h+1} - w^h)/S^h + w^1, gradient (p0 A - w^H)/(tau H).
        let a = (wp[1] - wp[0]) / path.s_sums[1] + wp[0];
        let expect = (d.probs()[leaf] * a - wp[1]) / (tau * depth);
        assert!((out.grad_logits[leaf] - expect).abs() < 1e-12);
    }

    #[test]
    fn theta_gradients_only_on_true_path() {
        let h = three_leaf_tree();
        let mut d = gumbel_softmax(&[0.3, 0.1, -0.5], 1.0, &[0.0; 3]).unwrap();
        d.aggregate_levels(&h).unwrap();
        let w = AdaptiveWeights::level_constant_init(&h);
        let out = ahl_backward(&d, &w, &h, 2).unwrap();
        assert_eq!(out.grad_theta.len(), h.depth());
        let nodes: Vec<NodeId> = out.grad_theta.iter().map(|(n, _)| *n).collect();
        // lc sits under pb (parent index 1).
        assert_eq!(nodes[0], NodeId { level: 1, index: 1 });
        assert_eq!(nodes[1], NodeId { level: 2, index: 2 });
    }

    #[test]
    fn ce_uniform_loss_is_log_c() {
        let d = gumbel_softmax(&[0.0; 8], 1.0, &[0.0; 8]).unwrap();
        let out = ce_forward_backward(&d, 3).unwrap();
        assert!((out.value - libm::log(8.0)).abs() < 1e-12);
        for (j, &g) in out.grad_logits.iter().enumerate() {
            let expect = 0.125 - if j == 3 { 1.0 } else { 0.0 };
            assert!((g - expect).abs() < 1e-12);
        }
        assert!(out.grad_theta.is_empty());
    }

    #[test]
    fn ablation_flag_resolution() {
        assert_eq!(
            ablation_config(AblationFlags::default()).unwrap(),
            LossConfig::ahl()
        );
        let cfg = ablation_config(AblationFlags {
            no_exploitation: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!cfg.hierarchical && cfg.gumbel && !cfg.adaptive);
        let cfg = ablation_config(AblationFlags {
            no_exploration: true,
            ..Default::default()
        })
        .unwrap();
        assert!(cfg.hierarchical && !cfg.gumbel && !cfg.adaptive);
        let cfg = ablation_config(AblationFlags {
            no_gumbel: true,
            ..Default::default()
        })
        .unwrap();
        assert!(cfg.hierarchical && !cfg.gumbel && cfg.adaptive);
        let cfg = ablation_config(AblationFlags {
            no_adaptive: true,
            ..Default::default()
        })
        .unwrap();
        assert!(cfg.hierarchical && cfg.gumbel && !cfg.adaptive);
        assert!(matches!(
            ablation_config(AblationFlags {
                no_gumbel: true,
                no_adaptive: true,
                ..Default::default()
            }),
            Err(LossError::ConflictingFlags)
        ));
    }

    #[test]
    fn shift_invariance() {
        let h = three_leaf_tree();
        let w = AdaptiveWeights::from_theta(alloc::vec![
            alloc::vec![0.4, 0.2],
            alloc::vec![-0.3, 0.9, 0.6],
        ]);
        let logits = [1.4, -0.2, 0.8];
        let shifted: Vec<f64> = logits.iter().map(|z| z + 37.5).collect();
        let noise = [0.3, -0.6, 0.1];
        let mut a = gumbel_softmax(&logits, 1.0, &noise).unwrap();
        let mut b = gumbel_softmax(&shifted, 1.0, &noise).unwrap();
        a.aggregate_levels(&h).unwrap();
        b.aggregate_levels(&h).unwrap();
        let oa = ahl_backward(&a, &w, &h, 1).unwrap();
        let ob = ahl_backward(&b, &w, &h, 1).unwrap();
        assert!((oa.value - ob.value).abs() < 1e-9);
        for (ga, gb) in oa.grad_logits.iter().zip(&ob.grad_logits) {
            assert!((ga - gb).abs() < 1e-9);
        }
    }
}
