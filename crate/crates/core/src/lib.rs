//! Core algorithms for long-tailed next-location prediction with an
//! adaptive hierarchical loss.
//!
//! The crate is organized around a four-level label tree
//! (need, activity, category, location):
//!
//! - [`hierarchy`]: the label tree, adjacent-level transition maps,
//!   lowest-common-ancestor queries and hierarchical distance.
//! - [`dataset`]: check-in filtering, 24-hour trajectory segmentation,
//!   chronological splitting and the head/tail location partition.
//! - [`loss`]: Gumbel-disturbed leaf probabilities, per-level aggregation,
//!   path conditionals, the adaptive hierarchical loss with closed-form
//!   gradients, and the cross-entropy baseline.
//! - [`train`]: a minimal mean-pooled embedding backbone, Adam, and the
//!   training loop that exercises the logits-in/gradients-out contract.
//! - [`metrics`]: MRR@k / NDCG@k ranking evaluation with head/tail group
//!   breakdown and hierarchical-distance statistics.
//! - [`synth`]: reproducible synthetic long-tailed check-in corpora with a
//!   known ground-truth hierarchy.
//! - [`check`]: independent oracles (finite differences, brute-force LCA,
//!   stable-sort ranking) used by the test suite and the `verify` command.
//!
//! The crate is `no_std` + `alloc`; all transcendental math goes through
//! `libm` so results are bit-stable across platforms. File formats, the
//! CLI, and everything that touches the filesystem live in the companion
//! `hiertail` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod check;
pub mod dataset;
pub mod hierarchy;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod train;
