//! Self-contained correctness oracles.
//!
//! Everything here re-derives a result through a second, slower route:
//! central finite differences for analytic gradients, parent-link walks
//! for lowest common ancestors, a full stable sort for ranks, sample
//! moments for the Gumbel sampler. The unit and property tests lean on
//! these, and the `verify` command runs the same suites against a fresh
//! random instance so a binary can re-certify itself in the field.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::{LabelHierarchy, NodeId};
use crate::loss::{
    ahl_backward, ahl_forward, ce_forward_backward, gumbel_softmax, sample_gumbel, AdaptiveWeights,
    LeafDistribution,
};

/// Relative tolerance for analytic-vs-finite-difference agreement.
pub const FD_RTOL: f64 = 1e-5;

/// Absolute floor: below this, differences are indistinguishable from
/// central-difference roundoff (about 1e-9 at step 1e-6) and do not
/// count against the relative tolerance.
pub const FD_ATOL: f64 = 1e-8;

/// Step used by the central difference; loss surfaces here are smooth
/// enough that truncation and cancellation balance near this value.
pub const FD_EPS: f64 = 1e-6;

/// Error scaled against `atol + rtol |want|`; below 1.0 is agreement.
pub fn fd_ratio_with(got: f64, want: f64, rtol: f64, atol: f64) -> f64 {
    libm::fabs(got - want) / (atol + rtol * libm::fabs(want))
}

/// [`fd_ratio_with`] at the default gradient tolerances.
pub fn fd_ratio(got: f64, want: f64) -> f64 {
    fd_ratio_with(got, want, FD_RTOL, FD_ATOL)
}

/// Euler-Mascheroni constant: mean of the standard Gumbel distribution.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Outcome of one named check; `detail` carries the measured quantity.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: String::from(name),
            pass,
            detail,
        }
    }
}

/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Absolute-floored relative error, so near-zero targets do not blow up
/// the ratio.
pub fn relative_error(got: f64, want: f64) -> f64 {
    libm::fabs(got - want) / libm::fabs(want).max(1e-8)
}

/// LCA by climbing parent links from both leaves: the last node at which
/// the two root paths agree. Independent of the ancestor-table route.
pub fn lca_by_parent_walk(
    hierarchy: &LabelHierarchy,
    leaf_a: usize,
    leaf_b: usize,
) -> (NodeId, usize) {
    let climb = |leaf: usize| -> Vec<NodeId> {
        let mut node = NodeId {
            level: hierarchy.depth(),
            index: leaf,
        };
        let mut path = alloc::vec![node];
        while node.level > 0 {
            node = hierarchy.parent_of(node).expect("valid node");
            path.push(node);
        }
        path.reverse();
        path
    };
    let pa = climb(leaf_a);
    let pb = climb(leaf_b);
    let mut last = pa[0];
    for (x, y) in pa.iter().zip(&pb).skip(1) {
        if x != y {
            break;
        }
        last = *x;
    }
    (last, last.level)
}

/// Rank via an explicit stable descending sort; ties keep index order,
/// so equal scores at smaller indices land ahead of the true leaf.
pub fn rank_by_stable_sort(scores: &[f64], true_leaf: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).expect("finite scores"));
    1 + order.iter().position(|&i| i == true_leaf).expect("present")
}

fn random_distribution(
    hierarchy: &LabelHierarchy,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, LeafDistribution) {
    let c = hierarchy.num_leaves();
    let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let noise = sample_gumbel(c, rng);
    let mut dist = gumbel_softmax(&logits, tau, &noise).expect("valid inputs");
    dist.aggregate_levels(hierarchy).expect("matching sizes");
    (logits, noise, dist)
}

fn random_weights(hierarchy: &LabelHierarchy, rng: &mut ChaCha8Rng) -> AdaptiveWeights {
    let theta = hierarchy
        .class_counts()
        .iter()
        .map(|&c| (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    AdaptiveWeights::from_theta(theta)
}

/// Analytic loss gradients against central differences: every logit, the
/// true-path thetas, and an off-path theta that must stay exactly zero.
pub fn check_loss_gradients(hierarchy: &LabelHierarchy, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = rng.gen_range(0.5..2.0);
    let (logits, noise, dist) = random_distribution(hierarchy, tau, &mut rng);
    let weights = random_weights(hierarchy, &mut rng);
    let c = hierarchy.num_leaves();
    let leaves = [0, c / 2, c - 1];
    let mut out = Vec::new();

    let mut worst_logit = 0.0_f64;
    let mut worst_theta = 0.0_f64;
    let mut worst_ce = 0.0_f64;
    let mut offpath_max = 0.0_f64;
    for &leaf in &leaves {
        let analytic = ahl_backward(&dist, &weights, hierarchy, leaf).expect("valid");
        for j in 0..c {
            let fd = central_difference(
                |x| {
                    let mut z = logits.clone();
                    z[j] = x;
                    let mut d = gumbel_softmax(&z, tau, &noise).expect("valid");
                    d.aggregate_levels(hierarchy).expect("sizes");
                    ahl_forward(&d, &weights, hierarchy, leaf).expect("valid")
                },
                logits[j],
                FD_EPS,
            );
            worst_logit = worst_logit.max(fd_ratio(analytic.grad_logits[j], fd));
        }
        let path = hierarchy.ancestor_path(leaf).expect("valid leaf");
        for (node, grad) in &analytic.grad_theta {
            let fd = central_difference(
                |x| {
                    let mut w = weights.clone();
                    w.theta_levels_mut()[node.level - 1][node.index] = x;
                    ahl_forward(&dist, &w, hierarchy, leaf).expect("valid")
                },
                weights.theta(*node),
                FD_EPS,
            );
            worst_theta = worst_theta.max(fd_ratio(*grad, fd));
        }
        // Any node off the true path: its theta must not move the loss.
        for h in 1..=hierarchy.depth() {
            let count = hierarchy.level(h).class_count();
            if let Some(other) = (0..count).find(|&i| i != path[h - 1] as usize) {
                let node = NodeId {
                    level: h,
                    index: other,
                };
                let fd = central_difference(
                    |x| {
                        let mut w = weights.clone();
                        w.theta_levels_mut()[h - 1][node.index] = x;
                        ahl_forward(&dist, &w, hierarchy, leaf).expect("valid")
                    },
                    weights.theta(node),
                    FD_EPS,
                );
                offpath_max = offpath_max.max(libm::fabs(fd));
            }
        }
        let ce = ce_forward_backward(&dist, leaf).expect("valid");
        for j in 0..c {
            let fd = central_difference(
                |x| {
                    let mut z = logits.clone();
                    z[j] = x;
                    let d = gumbel_softmax(&z, tau, &noise).expect("valid");
                    -libm::log(d.probs()[leaf].max(crate::loss::PROB_FLOOR))
                },
                logits[j],
                FD_EPS,
            );
            worst_ce = worst_ce.max(fd_ratio(ce.grad_logits[j], fd));
        }
    }
    out.push(CheckResult::new(
        "ahl-logit-grad",
        worst_logit < 1.0,
        format!("max scaled err {worst_logit:.3}"),
    ));
    out.push(CheckResult::new(
        "ahl-theta-grad",
        worst_theta < 1.0,
        format!("max scaled err {worst_theta:.3}"),
    ));
    out.push(CheckResult::new(
        "ahl-offpath-theta",
        offpath_max < FD_ATOL,
        format!("max |fd| {offpath_max:.3e}"),
    ));
    out.push(CheckResult::new(
        "ce-logit-grad",
        worst_ce < 1.0,
        format!("max scaled err {worst_ce:.3}"),
    ));
    out
}

/// Normalization, telescoping and ancestor-mass monotonicity on a random
/// disturbed distribution.
pub fn check_distribution_invariants(hierarchy: &LabelHierarchy, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, _, dist) = random_distribution(hierarchy, 1.0, &mut rng);
    let mut out = Vec::new();

    let mut level_err = 0.0_f64;
    for h in 1..=hierarchy.depth() {
        let total: f64 = dist.level_probs(h).expect("aggregated").iter().sum();
        level_err = level_err.max(libm::fabs(total - 1.0));
    }
    out.push(CheckResult::new(
        "level-normalization",
        level_err < 1e-9,
        format!("max |sum - 1| {level_err:.3e}"),
    ));

    let mut tele_err = 0.0_f64;
    let mut mono_ok = true;
    for _ in 0..16 {
        let leaf = rng.gen_range(0..hierarchy.num_leaves());
        let path = crate::loss::conditional_path_probs(&dist, hierarchy, leaf).expect("valid");
        let product: f64 = path.conds.iter().product();
        tele_err = tele_err.max(libm::fabs(product - dist.probs()[leaf]));
        for h in 1..path.s_sums.len() {
            if path.s_sums[h] > path.s_sums[h - 1] + 1e-12 {
                mono_ok = false;
            }
        }
    }
    out.push(CheckResult::new(
        "telescoping",
        tele_err < 1e-9,
        format!("max |prod - p0| {tele_err:.3e}"),
    ));
    out.push(CheckResult::new(
        "ancestor-monotone",
        mono_ok,
        String::from(if mono_ok {
            "S^h <= S^(h-1) held"
        } else {
            "violated"
        }),
    ));
    out
}

/// Structural tree checks: leaf-set partition per level, monotone class
/// counts, table LCA versus the parent-walk oracle, and the metric
/// axioms of the hierarchical distance.
pub fn check_hierarchy_invariants(hierarchy: &LabelHierarchy, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = hierarchy.num_leaves();
    let depth = hierarchy.depth();
    let mut out = Vec::new();

    let mut partition_ok = true;
    for h in 0..=depth {
        let count = if h == 0 {
            1
        } else {
            hierarchy.level(h).class_count()
        };
        let mut seen = alloc::vec![false; c];
        for index in 0..count {
            let node = NodeId { level: h, index };
            for &leaf in hierarchy.leaves_of(node).expect("valid node") {
                if core::mem::replace(&mut seen[leaf as usize], true) {
                    partition_ok = false;
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            partition_ok = false;
        }
    }
    out.push(CheckResult::new(
        "leaf-partition",
        partition_ok,
        String::from("each level partitions the leaves"),
    ));

    let counts = hierarchy.class_counts();
    let mono = counts.windows(2).all(|w| w[0] <= w[1]);
    out.push(CheckResult::new(
        "count-monotone",
        mono,
        format!("counts {counts:?}"),
    ));

    let mut lca_ok = true;
    let mut metric_ok = true;
    for _ in 0..64 {
        let a = rng.gen_range(0..c);
        let b = rng.gen_range(0..c);
        let fast = hierarchy.lowest_common_ancestor(a, b).expect("valid");
        let slow = lca_by_parent_walk(hierarchy, a, b);
        if fast != slow {
            lca_ok = false;
        }
        let dab = hierarchy.hierarchical_distance(a, b).expect("valid");
        let dba = hierarchy.hierarchical_distance(b, a).expect("valid");
        let x = rng.gen_range(0..c);
        let dax = hierarchy.hierarchical_distance(a, x).expect("valid");
        let dxb = hierarchy.hierarchical_distance(x, b).expect("valid");
        if dab != dba || dab > depth || (a == b) != (dab == 0) || dab > dax + dxb {
            metric_ok = false;
        }
    }
    out.push(CheckResult::new(
        "lca-parent-walk",
        lca_ok,
        String::from("table LCA matches parent-link walk"),
    ));
    out.push(CheckResult::new(
        "distance-metric",
        metric_ok,
        String::from("symmetry, identity, triangle, range"),
    ));
    out
}

/// Rank primitive against the stable-sort oracle, with forced ties.
pub fn check_rank_agreement(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        // Coarse quantization forces plenty of exact ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 4.0).collect();
        let true_leaf = rng.gen_range(0..n);
        let fast = crate::metrics::rank_of_true(&scores, true_leaf).expect("valid");
        if fast != rank_by_stable_sort(&scores, true_leaf) {
            ok = false;
        }
    }
    alloc::vec![CheckResult::new(
        "rank-stable-sort",
        ok,
        String::from("200 tied-score vectors agreed"),
    )]
}

/// Sample mean and variance of the Gumbel sampler against the analytic
/// values (Euler-Mascheroni and pi^2/6).
pub fn check_gumbel_moments(seed: u64, n: usize) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sample_gumbel(n, &mut rng);
    let mean: f64 = samples.iter().sum::<f64>() / n as f64;
    let var: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let pi = core::f64::consts::PI;
    let mean_err = libm::fabs(mean - EULER_GAMMA);
    let var_err = libm::fabs(var - pi * pi / 6.0);
    alloc::vec![
        CheckResult::new(
            "gumbel-mean",
            mean_err < 0.05,
            format!("|mean - gamma| {mean_err:.4}"),
        ),
        CheckResult::new(
            "gumbel-variance",
            var_err < 0.1,
            format!("|var - pi^2/6| {var_err:.4}"),
        ),
    ]
}

/// Every suite against one hierarchy and seed. The `verify` command
/// prints these; tests assert each `pass`.
pub fn run_all(hierarchy: &LabelHierarchy, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.extend(check_hierarchy_invariants(hierarchy, seed));
    out.extend(check_distribution_invariants(
        hierarchy,
        seed.wrapping_add(1),
    ));
    out.extend(check_loss_gradients(hierarchy, seed.wrapping_add(2)));
    out.extend(check_rank_agreement(seed.wrapping_add(3)));
    out.extend(check_gumbel_moments(seed.wrapping_add(4), 20_000));
    out
}
