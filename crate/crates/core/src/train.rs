//! Reference backbone and training loop.
//!
//! The backbone is deliberately minimal: mean-pool the prefix's location
//! embeddings, add the user embedding, push through one linear layer.
//! It exists to exercise the plug-in contract (any logits producer plus
//! the loss engine's gradients plus an optimizer), not to model
//! mobility well.
//!
//! # Reproducibility protocol
//!
//! All randomness comes from ChaCha8 seeded with `config.seed`, split
//! into fixed streams: stream 0 draws parameter init (location
//! embeddings, then user embeddings, then output weights, row-major,
//! uniform in ±1/sqrt(d); bias starts at zero), stream 1 shuffles the
//! sample order each epoch, stream 2 draws per-sample Gumbel noise.
//! Because noise has its own stream, runs that differ only in loss mode
//! see identical inits and identical batch orders, and modes with noise
//! disabled never consume stream 2 at all. Single-threaded accumulation
//! in shuffled order makes fixed-seed runs bit-identical.
//!
//! Per epoch: minibatch Adam over (prefix, next) pairs, mean-reduced
//! gradients, then a validation pass scoring raw logits (no noise) for
//! MRR@5. The returned snapshot is the one with the best validation
//! MRR@5 (strictly-greater replacement, so ties keep the earlier
//! epoch); with an empty validation split the final parameters win.

use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CheckinDataset, Sample, SplitTag};
use crate::hierarchy::LabelHierarchy;
use crate::loss::{
    ahl_backward, ce_forward_backward, gumbel_softmax, sample_gumbel, AdaptiveWeights, LossConfig,
};
use crate::metrics::{mrr_at_k, rank_of_true, Scorer};

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    EmptyPrefix,
    EmptyTrainSplit,
    /// Dataset location count differs from the hierarchy's leaf count.
    SizeMismatch {
        leaves: usize,
        locations: usize,
    },
    BadConfig {
        reason: &'static str,
    },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range for {len}")
            }
            Self::EmptyPrefix => write!(f, "prefix must contain at least one location"),
            Self::EmptyTrainSplit => write!(f, "train split has no samples"),
            Self::SizeMismatch { leaves, locations } => {
                write!(
                    f,
                    "hierarchy has {leaves} leaves, dataset {locations} locations"
                )
            }
            Self::BadConfig { reason } => write!(f, "bad train config: {reason}"),
        }
    }
}

impl core::error::Error for TrainError {}

/// Backbone parameters in four flat row-major blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub d: usize,
    /// `|P| x d`.
    pub loc_embeddings: Vec<f64>,
    /// `|U| x d`.
    pub user_embeddings: Vec<f64>,
    /// `d x |P|`: row k holds dimension k's weights over locations.
    pub output_weights: Vec<f64>,
    /// `|P|`.
    pub output_bias: Vec<f64>,
}

impl BackboneParams {
    pub fn num_locations(&self) -> usize {
        self.output_bias.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_embeddings.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn zeros(num_locations: usize, num_users: usize, d: usize) -> Self {
        Self {
            d,
            loc_embeddings: alloc::vec![0.0; num_locations * d],
            user_embeddings: alloc::vec![0.0; num_users * d],
            output_weights: alloc::vec![0.0; d * num_locations],
            output_bias: alloc::vec![0.0; num_locations],
        }
    }
}

/// Uniform init in ±1/sqrt(d) for embeddings and output weights, all
/// from the given stream in block order; bias stays zero.
pub fn init_params<R: Rng + ?Sized>(
    num_locations: usize,
    num_users: usize,
    d: usize,
    rng: &mut R,
) -> BackboneParams {
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut params = BackboneParams::zeros(num_locations, num_users, d);
    for block in [
        &mut params.loc_embeddings,
        &mut params.user_embeddings,
        &mut params.output_weights,
    ] {
        for p in block.iter_mut() {
            *p = rng.gen_range(-scale..scale);
        }
    }
    params
}

/// Pooled hidden vector: mean of prefix location embeddings plus the
/// user embedding.
fn pooled(params: &BackboneParams, user: u32, prefix: &[u32]) -> Result<Vec<f64>, TrainError> {
    if prefix.is_empty() {
        return Err(TrainError::EmptyPrefix);
    }
    let d = params.d;
    let p = params.num_locations();
    if user as usize >= params.num_users() {
        return Err(TrainError::IndexOutOfRange {
            what: "user",
            index: user as usize,
            len: params.num_users(),
        });
    }
    let mut v = alloc::vec![0.0; d];
    for &loc in prefix {
        if loc as usize >= p {
            return Err(TrainError::IndexOutOfRange {
                what: "location",
                index: loc as usize,
                len: p,
            });
        }
        let row = &params.loc_embeddings[loc as usize * d..(loc as usize + 1) * d];
        for (a, b) in v.iter_mut().zip(row) {
            *a += b;
        }
    }
    let inv = 1.0 / prefix.len() as f64;
    let urow = &params.user_embeddings[user as usize * d..(user as usize + 1) * d];
    for (a, b) in v.iter_mut().zip(urow) {
        *a = *a * inv + b;
    }
    Ok(v)
}

/// Logits over all locations for one (user, prefix) pair.
pub fn backbone_forward(
    params: &BackboneParams,
    user: u32,
    prefix: &[u32],
) -> Result<Vec<f64>, TrainError> {
    let v = pooled(params, user, prefix)?;
    let p = params.num_locations();
    let mut z = params.output_bias.clone();
    for (k, &vk) in v.iter().enumerate() {
        let row = &params.output_weights[k * p..(k + 1) * p];
        for (zj, &w) in z.iter_mut().zip(row) {
            *zj += vk * w;
        }
    }
    Ok(z)
}

/// Gradient buffers shaped like [`BackboneParams`].
#[derive(Clone, Debug)]
pub struct BackboneGrads {
    pub loc_embeddings: Vec<f64>,
    pub user_embeddings: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl BackboneGrads {
    pub fn zeros_like(params: &BackboneParams) -> Self {
        Self {
            loc_embeddings: alloc::vec![0.0; params.loc_embeddings.len()],
            user_embeddings: alloc::vec![0.0; params.user_embeddings.len()],
            output_weights: alloc::vec![0.0; params.output_weights.len()],
            output_bias: alloc::vec![0.0; params.output_bias.len()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in [
            &mut self.loc_embeddings,
            &mut self.user_embeddings,
            &mut self.output_weights,
            &mut self.output_bias,
        ] {
            for g in block.iter_mut() {
                *g *= factor;
            }
        }
    }
}

/// Chain-rule accumulation of one sample's parameter gradients into
/// `grads`. The bias picks up `grad_logits` unchanged; each prefix
/// occurrence shares 1/t of the pooled-vector gradient.
pub fn accumulate_backward(
    params: &BackboneParams,
    user: u32,
    prefix: &[u32],
    grad_logits: &[f64],
    grads: &mut BackboneGrads,
) -> Result<(), TrainError> {
    let v = pooled(params, user, prefix)?;
    let d = params.d;
    let p = params.num_locations();
    for (gb, &gz) in grads.output_bias.iter_mut().zip(grad_logits) {
        *gb += gz;
    }
    let mut grad_v = alloc::vec![0.0; d];
    for (k, &vk) in v.iter().enumerate() {
        let wrow = &params.output_weights[k * p..(k + 1) * p];
        let grow = &mut grads.output_weights[k * p..(k + 1) * p];
        let mut acc = 0.0;
        for ((gw, &w), &gz) in grow.iter_mut().zip(wrow).zip(grad_logits) {
            *gw += vk * gz;
            acc += w * gz;
        }
        grad_v[k] = acc;
    }
    let urow = &mut grads.user_embeddings[user as usize * d..(user as usize + 1) * d];
    for (g, &gv) in urow.iter_mut().zip(&grad_v) {
        *g += gv;
    }
    let inv = 1.0 / prefix.len() as f64;
    for &loc in prefix {
        let row = &mut grads.loc_embeddings[loc as usize * d..(loc as usize + 1) * d];
        for (g, &gv) in row.iter_mut().zip(&grad_v) {
            *g += gv * inv;
        }
    }
    Ok(())
}

/// One sample's gradients in fresh buffers.
pub fn backbone_backward(
    params: &BackboneParams,
    user: u32,
    prefix: &[u32],
    grad_logits: &[f64],
) -> Result<BackboneGrads, TrainError> {
    let mut grads = BackboneGrads::zeros_like(params);
    accumulate_backward(params, user, prefix, grad_logits, &mut grads)?;
    Ok(grads)
}

/// Adam over a fixed sequence of parameter blocks.
///
/// Standard form: first/second moment EMAs with bias correction,
/// `p -= lr * mhat / (sqrt(vhat) + 1e-8)`. Block order is part of the
/// contract: backbone blocks (locations, users, weights, bias) then one
/// theta block per hierarchy level, coarse to fine.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), block_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            steps: 0,
            m: block_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, blocks: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.steps += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.steps as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.steps as f64);
        for ((block, grad), (m, v)) in blocks
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            for ((p, &g), (mi, vi)) in block
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub loss: LossConfig,
    pub tau: f64,
    pub d: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            seed: 42,
            loss: LossConfig::ahl(),
            tau: 1.0,
            d: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |reason| Err(TrainError::BadConfig { reason });
        // Zero is allowed (a degenerate no-op run); negative is not.
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return err("learning rate must be finite and non-negative");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return err("temperature must be positive");
        }
        if self.d == 0 {
            return err("embedding dimension must be at least 1");
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1");
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mrr5: f64,
}

/// Trained state: the selected snapshot plus the full log.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: BackboneParams,
    pub weights: AdaptiveWeights,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the returned snapshot; `None` when no
    /// validation pass ever produced a score (empty val split or zero
    /// epochs), in which case the final state is returned.
    pub best_epoch: Option<usize>,
}

/// Scores samples with raw logits, noise off. Used for validation and
/// test evaluation.
pub struct BackboneScorer<'a> {
    pub params: &'a BackboneParams,
}

impl Scorer for BackboneScorer<'_> {
    fn score(&self, sample: &Sample) -> Vec<f64> {
        backbone_forward(self.params, sample.user, &sample.prefix).expect("sample in range")
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Minibatch Adam over the train split; see the module docs for the
/// reproducibility protocol.
pub fn train(
    dataset: &CheckinDataset,
    hierarchy: &LabelHierarchy,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    if hierarchy.num_leaves() != dataset.num_locations() {
        return Err(TrainError::SizeMismatch {
            leaves: hierarchy.num_leaves(),
            locations: dataset.num_locations(),
        });
    }
    let train_samples = dataset.samples(SplitTag::Train);
    if train_samples.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let val_samples = dataset.samples(SplitTag::Val);
    let p = dataset.num_locations();

    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut params = init_params(p, dataset.num_users(), config.d, &mut init_rng);
    let mut weights = AdaptiveWeights::level_constant_init(hierarchy);
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut noise_rng = stream_rng(config.seed, STREAM_NOISE);

    let theta_sizes: Vec<usize> = weights.theta_levels().iter().map(|l| l.len()).collect();
    let mut block_sizes = alloc::vec![
        params.loc_embeddings.len(),
        params.user_embeddings.len(),
        params.output_weights.len(),
        params.output_bias.len(),
    ];
    block_sizes.extend(&theta_sizes);
    let mut adam = Adam::new(config.learning_rate, config.adam_betas, &block_sizes);

    let zero_noise = alloc::vec![0.0; p];
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, BackboneParams, AdaptiveWeights)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = BackboneGrads::zeros_like(&params);
            let mut theta_grads: Vec<Vec<f64>> =
                theta_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect();
            for &idx in batch {
                let sample = &train_samples[idx];
                let logits = backbone_forward(&params, sample.user, &sample.prefix)?;
                let noise;
                let noise_ref: &[f64] = if config.loss.gumbel {
                    noise = sample_gumbel(p, &mut noise_rng);
                    &noise
                } else {
                    &zero_noise
                };
                let mut dist =
                    gumbel_softmax(&logits, config.tau, noise_ref).expect("validated tau");
                let out = if config.loss.hierarchical {
                    dist.aggregate_levels(hierarchy).expect("sizes checked");
                    ahl_backward(&dist, &weights, hierarchy, sample.target as usize)
                        .expect("leaf in range")
                } else {
                    ce_forward_backward(&dist, sample.target as usize).expect("leaf in range")
                };
                loss_sum += out.value;
                accumulate_backward(
                    &params,
                    sample.user,
                    &sample.prefix,
                    &out.grad_logits,
                    &mut grads,
                )?;
                if config.loss.adaptive {
                    for (node, g) in &out.grad_theta {
                        theta_grads[node.level - 1][node.index] += g;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            for block in &mut theta_grads {
                for g in block.iter_mut() {
                    *g *= inv;
                }
            }
            let mut blocks: Vec<&mut [f64]> = alloc::vec![
                &mut params.loc_embeddings,
                &mut params.user_embeddings,
                &mut params.output_weights,
                &mut params.output_bias,
            ];
            for level in weights.theta_levels_mut().iter_mut() {
                blocks.push(level.as_mut_slice());
            }
            let mut grad_refs: Vec<&[f64]> = alloc::vec![
                &grads.loc_embeddings,
                &grads.user_embeddings,
                &grads.output_weights,
                &grads.output_bias,
            ];
            for block in &theta_grads {
                grad_refs.push(block);
            }
            adam.step(&mut blocks, &grad_refs);
        }

        // Softplus keeps weights positive unless theta underflows hard;
        // assert the guarantee actually held this epoch.
        for (level, thetas) in weights.theta_levels().iter().enumerate() {
            for &t in thetas {
                assert!(
                    crate::loss::softplus(t) > 0.0,
                    "weight positivity lost at level {}",
                    level + 1
                );
            }
        }

        let val_mrr5 = if val_samples.is_empty() {
            0.0
        } else {
            let mut total = 0.0;
            for sample in &val_samples {
                let scores = backbone_forward(&params, sample.user, &sample.prefix)?;
                let rank = rank_of_true(&scores, sample.target as usize).expect("leaf in range");
                total += mrr_at_k(rank, 5);
            }
            total / val_samples.len() as f64
        };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_samples.len() as f64,
            val_mrr5,
        });
        if !val_samples.is_empty() {
            let improved = best.as_ref().is_none_or(|(score, ..)| val_mrr5 > *score);
            if improved {
                best = Some((val_mrr5, epoch, params.clone(), weights.clone()));
            }
        }
    }

    Ok(match best {
        Some((_, epoch, best_params, best_weights)) => TrainOutput {
            params: best_params,
            weights: best_weights,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutput {
            params,
            weights,
            log,
            best_epoch: None,
        },
    })
}
