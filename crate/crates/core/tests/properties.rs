//! Property-based suites over random trees, distributions, and record
//! streams. Each property leans on an independent oracle from the
//! `check` module or re-derives the expected result inline.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hiertail_core::check;
use hiertail_core::dataset::{filter_and_index, CheckinRecord, FilterThresholds, SECONDS_PER_DAY};
use hiertail_core::hierarchy::LabelHierarchy;
use hiertail_core::loss::{
    ahl_backward, ahl_forward, ce_forward_backward, conditional_path_probs, gumbel_softmax,
    inverse_softplus, sample_gumbel, AdaptiveWeights,
};
use hiertail_core::synth::random_tree;

/// Random monotone level sizes for a depth-`depth` tree with at most
/// `max_leaves` leaves, then a random tree over them.
fn build_tree(depth: usize, max_leaves: usize, seed: u64) -> LabelHierarchy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![0usize; depth];
    sizes[depth - 1] = rng.gen_range(2..=max_leaves);
    for h in (0..depth - 1).rev() {
        sizes[h] = rng.gen_range(1..=sizes[h + 1]);
    }
    LabelHierarchy::build(&random_tree(&sizes, &mut rng)).expect("valid random tree")
}

fn random_weights(hier: &LabelHierarchy, rng: &mut ChaCha8Rng) -> AdaptiveWeights {
    AdaptiveWeights::from_theta(
        hier.class_counts()
            .iter()
            .map(|&c| (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Structural invariants on random trees via the check suites.
    #[test]
    fn hierarchy_invariants_hold(depth in 2usize..=4, seed in any::<u64>()) {
        let hier = build_tree(depth, 50, seed);
        for result in check::check_hierarchy_invariants(&hier, seed) {
            prop_assert!(result.pass, "{}: {}", result.name, result.detail);
        }
    }

    /// Normalization, telescoping, and exact ancestor monotonicity on
    /// random disturbed distributions.
    #[test]
    fn distribution_invariants_hold(
        depth in 2usize..=4,
        seed in any::<u64>(),
        tau in prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
    ) {
        let hier = build_tree(depth, 50, seed);
        let c = hier.num_leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let noise = sample_gumbel(c, &mut rng);
        let mut dist = gumbel_softmax(&logits, tau, &noise).unwrap();
        dist.aggregate_levels(&hier).unwrap();
        for h in 1..=depth {
            let total: f64 = dist.level_probs(h).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "level {h} sums to {total}");
        }
        for leaf in 0..c {
            let path = conditional_path_probs(&dist, &hier, leaf).unwrap();
            let product: f64 = path.conds.iter().product();
            prop_assert!((product - dist.probs()[leaf]).abs() < 1e-12);
            // Exact, not approximate: a parent is a sum of non-negative
            // children, so rounding can only round up.
            for h in 1..path.s_sums.len() {
                prop_assert!(path.s_sums[h] <= path.s_sums[h - 1]);
                prop_assert!(path.s_sums[h] > 0.0);
            }
        }
    }

    /// Unit weights collapse AHL to CE (telescoping identity).
    #[test]
    fn unit_weight_equivalence(depth in 2usize..=4, seed in any::<u64>()) {
        let hier = build_tree(depth, 50, seed);
        let c = hier.num_leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xce);
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let noise = sample_gumbel(c, &mut rng);
        let mut dist = gumbel_softmax(&logits, 1.0, &noise).unwrap();
        dist.aggregate_levels(&hier).unwrap();
        let unit = AdaptiveWeights::from_theta(
            hier.class_counts()
                .iter()
                .map(|&n| vec![inverse_softplus(1.0); n])
                .collect(),
        );
        let leaf = rng.gen_range(0..c);
        let ahl = ahl_forward(&dist, &unit, &hier, leaf).unwrap();
        let ce = ce_forward_backward(&dist, leaf).unwrap().value;
        prop_assert!((ahl * depth as f64 - ce).abs() < 1e-10);
    }

    /// Loss and logit gradients are invariant to constant logit shifts.
    #[test]
    fn shift_invariance(depth in 2usize..=4, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let hier = build_tree(depth, 30, seed);
        let c = hier.num_leaves();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5417);
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let noise = sample_gumbel(c, &mut rng);
        let weights = random_weights(&hier, &mut rng);
        let leaf = rng.gen_range(0..c);
        let run = |z: &[f64]| {
            let mut d = gumbel_softmax(z, 1.0, &noise).unwrap();
            d.aggregate_levels(&hier).unwrap();
            ahl_backward(&d, &weights, &hier, leaf).unwrap()
        };
        let a = run(&logits);
        let b = run(&shifted);
        prop_assert!((a.value - b.value).abs() < 1e-9);
        for (x, y) in a.grad_logits.iter().zip(&b.grad_logits) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    /// Closed-form gradients agree with central finite differences.
    /// The acceptance suite runs the full 200-instance version; this
    /// keeps a randomized regression net on every test run.
    #[test]
    fn gradients_match_finite_differences(depth in 2usize..=4, seed in any::<u64>()) {
        let hier = build_tree(depth, 20, seed);
        for result in check::check_loss_gradients(&hier, seed) {
            prop_assert!(result.pass, "{}: {}", result.name, result.detail);
        }
    }

    /// Rank primitive against a full stable sort, with ties.
    #[test]
    fn rank_matches_stable_sort(seed in any::<u64>()) {
        for result in check::check_rank_agreement(seed) {
            prop_assert!(result.pass, "{}: {}", result.name, result.detail);
        }
    }

    /// 24-hour segmentation equals a brute-force linear scan.
    #[test]
    fn segmentation_matches_scan_oracle(
        seed in any::<u64>(),
        n_users in 1usize..4,
        per_user in 2usize..30,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for u in 0..n_users {
            for _ in 0..per_user {
                records.push(CheckinRecord {
                    user_id: format!("u{u}"),
                    loc_id: format!("l{}", rng.gen_range(0..5)),
                    lat: 0.0,
                    lon: 0.0,
                    category: "c".into(),
                    timestamp: rng.gen_range(0..10 * SECONDS_PER_DAY),
                });
            }
        }
        let mut ds = filter_and_index(
            &records,
            FilterThresholds { min_location_visits: 1, min_user_checkins: 1 },
        )
        .unwrap();
        ds.segment_trajectories();

        // Oracle: per user, sort (timestamp, loc), scan with an anchor.
        let mut expected: Vec<(u32, Vec<i64>)> = Vec::new();
        for user in 0..ds.users.len() as u32 {
            let mut times: Vec<(i64, u32)> = ds
                .records
                .iter()
                .filter(|r| r.user == user)
                .map(|r| (r.timestamp, r.loc))
                .collect();
            times.sort();
            let mut window: Vec<i64> = Vec::new();
            let mut anchor = None;
            for (t, _) in times {
                match anchor {
                    Some(a) if t - a < SECONDS_PER_DAY => window.push(t),
                    _ => {
                        if window.len() >= 2 {
                            expected.push((user, window.clone()));
                        }
                        window = vec![t];
                        anchor = Some(t);
                    }
                }
            }
            if window.len() >= 2 {
                expected.push((user, window));
            }
        }
        let got: Vec<(u32, Vec<i64>)> = ds
            .trajectories
            .iter()
            .map(|t| (t.user, t.points.iter().map(|p| p.timestamp).collect()))
            .collect();
        prop_assert_eq!(got, expected);
    }

    /// Filtering twice is the same as filtering once.
    #[test]
    fn filter_fixed_point(seed in any::<u64>(), n in 20usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<CheckinRecord> = (0..n)
            .map(|_| CheckinRecord {
                user_id: format!("u{}", rng.gen_range(0..6)),
                loc_id: format!("l{}", rng.gen_range(0..8)),
                lat: 0.0,
                lon: 0.0,
                category: "c".into(),
                timestamp: rng.gen_range(0..5 * SECONDS_PER_DAY),
            })
            .collect();
        let thresholds = FilterThresholds {
            min_location_visits: rng.gen_range(1..6),
            min_user_checkins: rng.gen_range(1..10),
        };
        // Everything filtered away is a legal outcome; idempotence is
        // checked whenever something survives.
        if let Ok(first) = filter_and_index(&records, thresholds) {
            let second = filter_and_index(&first.to_records(), thresholds).unwrap();
            prop_assert_eq!(first, second);
        }
    }

    /// Split tags partition trajectories 8:1:1 under the floor rule
    /// before the unseen-entity drop.
    #[test]
    fn split_counts_follow_floor_rule(n in 1usize..40) {
        // One user, n disjoint two-point windows, tiny location set so
        // nothing is unseen except possibly late-only locations.
        let mut records = Vec::new();
        for day in 0..n {
            let base = (day * 2) as i64 * SECONDS_PER_DAY;
            records.push(CheckinRecord {
                user_id: "u".into(),
                loc_id: "a".into(),
                lat: 0.0,
                lon: 0.0,
                category: "c".into(),
                timestamp: base,
            });
            records.push(CheckinRecord {
                user_id: "u".into(),
                loc_id: "b".into(),
                lat: 0.0,
                lon: 0.0,
                category: "c".into(),
                timestamp: base + 60,
            });
        }
        let mut ds = filter_and_index(
            &records,
            FilterThresholds { min_location_visits: 1, min_user_checkins: 1 },
        )
        .unwrap();
        ds.segment_trajectories();
        ds.chronological_split();
        let stats = ds.stats();
        // Both locations appear in every window, so nothing is dropped
        // when train is nonempty; with train empty, all windows drop.
        let train = 4 * n / 5;
        let val = n / 10;
        if train == 0 {
            prop_assert_eq!(stats.trajectories, 0);
        } else {
            prop_assert_eq!(stats.train_trajectories, train as u64);
            prop_assert_eq!(stats.val_trajectories, val as u64);
            prop_assert_eq!(stats.test_trajectories, (n - train - val) as u64);
        }
    }

    /// Head/tail partition: exact ceil size, dominance up to the index
    /// tie rule.
    #[test]
    fn head_tail_dominance(seed in any::<u64>(), n_locs in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for l in 0..n_locs {
            let visits = rng.gen_range(1..20);
            for v in 0..visits {
                records.push(CheckinRecord {
                    user_id: "u".into(),
                    loc_id: format!("l{l:03}"),
                    lat: 0.0,
                    lon: 0.0,
                    category: "c".into(),
                    timestamp: (l * 100 + v) as i64,
                });
            }
        }
        let mut ds = filter_and_index(
            &records,
            FilterThresholds { min_location_visits: 1, min_user_checkins: 1 },
        )
        .unwrap();
        ds.partition_head_tail();
        let head: Vec<usize> = (0..n_locs).filter(|&i| ds.head_mask[i]).collect();
        prop_assert_eq!(head.len(), n_locs.div_ceil(5));
        let min_head = head.iter().map(|&i| ds.visit_counts[i]).min().unwrap();
        let max_tail = (0..n_locs)
            .filter(|&i| !ds.head_mask[i])
            .map(|i| ds.visit_counts[i])
            .max()
            .unwrap_or(0);
        prop_assert!(min_head >= max_tail);
        // At a count tie across the boundary, head members have the
        // smaller indices.
        if min_head == max_tail && max_tail > 0 {
            let last_head = head
                .iter()
                .filter(|&&i| ds.visit_counts[i] == min_head)
                .max()
                .unwrap();
            let first_tail = (0..n_locs)
                .filter(|&i| !ds.head_mask[i] && ds.visit_counts[i] == max_tail)
                .min()
                .unwrap();
            prop_assert!(*last_head < first_tail);
        }
    }
}
