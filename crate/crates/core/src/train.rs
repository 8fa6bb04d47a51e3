//! Pretraining and joint reciprocal training of a forward/backward pair.
//!
//! All randomness is derived from `(seed, purpose, epoch, batch)` through
//! separate ChaCha streams, so a run resumed from an epoch boundary replays
//! exactly what the uninterrupted run would have done.
//!
//! Each optimizer step splits its batch into fixed-size chunks of scenes, runs
//! every chunk on its own graph (in parallel when enabled) and sums the chunk
//! gradients in chunk order. Results therefore do not depend on the execution
//! strategy.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{time_reverse, BackwardSample, SceneSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{self, NetRef, LOG_CLAMP};
use crate::model::{sample_noise, slice_rows, Direction, Episode, Generator, ModelConfig, PairedBatch, Predictor};
use crate::optim::{accumulate, adam_step, clip_grad_norm, AdamConfig, AdamState};
use crate::par::Execution;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternation {
    /// θ-step then φ-step on every batch.
    PerBatch,
    /// A full epoch of θ-steps, then a full epoch of φ-steps.
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total epochs, including the first `pretrain_epochs`.
    pub epochs: usize,
    /// Leading epochs run with `lambda = 1`, i.e. independent training.
    pub pretrain_epochs: usize,
    pub lambda: f64,
    pub gan_weight: f64,
    pub seed: u64,
    pub alternation: Alternation,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    /// Scenes per gradient chunk.
    pub chunk_scenes: usize,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 50,
            pretrain_epochs: 20,
            lambda: 0.5,
            gan_weight: 1.0,
            seed: 0,
            alternation: Alternation::PerBatch,
            adam: AdamConfig::default(),
            clip_norm: 10.0,
            chunk_scenes: 16,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule (200 epochs).
    pub fn paper() -> Self {
        Self {
            epochs: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.chunk_scenes == 0 {
            return bad("chunk_scenes must be >= 1");
        }
        if self.pretrain_epochs > self.epochs {
            return bad("pretrain_epochs must not exceed epochs");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return bad("divergence_threshold must be positive");
        }
        losses::LossConfig {
            lambda: self.lambda,
            gan_weight: self.gan_weight,
        }
        .validate()
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.pretrain_epochs {
            1.0
        } else {
            self.lambda
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Forward,
    Backward,
}

impl Role {
    fn index(self) -> u64 {
        match self {
            Role::Forward => 0,
            Role::Backward => 1,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Role::Forward => Direction::FORWARD,
            Role::Backward => Direction::BACKWARD,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Forward => "forward",
            Role::Backward => "backward",
        }
    }
}

const PURPOSE_INIT: u64 = 1;
const PURPOSE_SHUFFLE: u64 = 2;
const PURPOSE_NOISE: u64 = 3;

/// Independent stream for one purpose/epoch/batch/role combination.
fn stream_rng(seed: u64, purpose: u64, epoch: usize, batch: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 60) | ((epoch as u64) << 32) | ((batch as u64) << 4) | role);
    rng
}

/// A predictor with the optimizer states of its generator and discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub model: Predictor,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
}

impl Network {
    pub fn new(config: &ModelConfig, role: Role, seed: u64) -> Self {
        let mut rng = stream_rng(seed, PURPOSE_INIT, 0, 0, role.index());
        Self::from_model(Predictor::new(config, role.direction(), &mut rng))
    }

    pub fn from_model(model: Predictor) -> Self {
        Self {
            gen_opt: AdamState::new(&model.generator.params),
            disc_opt: AdamState::new(&model.discriminator.params),
            model,
        }
    }

    pub fn generator(&self) -> &Generator {
        &self.model.generator
    }
}

/// Losses of one optimizer step of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub role: Role,
    pub lambda: f64,
    /// Discriminator loss (mean over agents); 0 when adversarial training is off.
    pub disc_loss: f64,
    /// Non-saturating generator loss (mean over agents).
    pub adv_loss: f64,
    /// Mean per-scene prediction error.
    pub direct: f64,
    /// Mean per-scene reconstruction error, if computed.
    pub reconstruction: Option<f64>,
    /// `gan_weight * adv_loss + J`.
    pub total: f64,
}

/// Forward and backward networks trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocalPair {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub forward: Network,
    pub backward: Network,
    pub history: Vec<StepRecord>,
    /// Completed epochs.
    pub epochs_done: usize,
}

impl ReciprocalPair {
    pub fn new(model_config: &ModelConfig, train_config: &TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        Ok(Self {
            model_config: model_config.clone(),
            train_config: train_config.clone(),
            forward: Network::new(model_config, Role::Forward, train_config.seed),
            backward: Network::new(model_config, Role::Backward, train_config.seed),
            history: Vec::new(),
            epochs_done: 0,
        })
    }

    pub fn network(&self, role: Role) -> &Network {
        match role {
            Role::Forward => &self.forward,
            Role::Backward => &self.backward,
        }
    }
}

fn batches(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, PURPOSE_SHUFFLE, epoch, 0, 0));
    order
}

struct ChunkOut {
    grads: Vec<Vec<f64>>,
    direct: f64,
    reconstruction: Option<f64>,
    adv: f64,
    total: f64,
}

/// Sum of per-chunk gradients in chunk order.
fn reduce_grads(outs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = outs[0].iter().map(|g| vec![0.0; g.len()]).collect();
    for g in outs {
        accumulate(&mut acc, g);
    }
    acc
}

fn full_trajectory(input: &[Var], prediction: &[Var]) -> Vec<Var> {
    input.iter().chain(prediction).copied().collect()
}

fn check_loss(epoch: usize, loss: f64, cfg: &TrainConfig) -> Result<()> {
    if !loss.is_finite() || loss.abs() > cfg.divergence_threshold {
        return Err(Error::Diverged { epoch, loss });
    }
    Ok(())
}

/// Step context shared by the discriminator and generator updates.
struct StepInput<'a> {
    batch: &'a PairedBatch,
    chunks: Vec<Range<usize>>,
    scenes: usize,
    rows: usize,
}

impl StepInput<'_> {
    fn rows_of(&self, chunk: &Range<usize>) -> Range<usize> {
        let g = self.batch.layout.groups();
        g[chunk.start].start..g[chunk.end - 1].end
    }
}

fn discriminator_update(
    net: &mut Network,
    step: &StepInput<'_>,
    z: &Tensor,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<f64> {
    let generator = &net.model.generator;
    let disc = &net.model.discriminator;
    let weight = 1.0 / step.rows as f64;
    let outs = exec.try_map(step.chunks.len(), |ci| -> Result<(Vec<Vec<f64>>, f64)> {
        let sub = step.batch.slice(step.chunks[ci].clone());
        let rows = step.rows_of(&step.chunks[ci]);
        let mut g = Graph::new();
        let gp = generator.params.bind(&mut g, false);
        let dp = disc.params.bind(&mut g, true);
        let input = sub.bind_input(&mut g);
        let target = sub.bind_target(&mut g);
        let ctx = g.constant(sub.context.clone());
        let zv = g.constant(slice_rows(z, rows));
        let fake = generator.forward(&mut g, &gp, &input, &sub.layout, ctx, zv)?;
        let real_score = disc.forward(&mut g, &dp, &full_trajectory(&input, &target))?;
        let fake_score = disc.forward(&mut g, &dp, &full_trajectory(&input, &fake.positions))?;
        let loss = losses::discriminator_loss(&mut g, real_score, fake_score, weight)?;
        g.backward(loss)?;
        Ok((disc.params.grads(&g, &dp), g.value(loss).item().unwrap_or(f64::NAN)))
    })?;
    let loss: f64 = outs.iter().map(|o| o.1).sum();
    let mut grads = reduce_grads(&outs.into_iter().map(|o| o.0).collect::<Vec<_>>());
    clip_grad_norm(&mut grads, cfg.clip_norm);
    adam_step(&mut net.model.discriminator.params, &grads, &mut net.disc_opt, &cfg.adam)?;
    Ok(loss)
}

#[allow(clippy::too_many_arguments)]
fn generator_update(
    net: &mut Network,
    partner: Option<&Generator>,
    step: &StepInput<'_>,
    z_own: &Tensor,
    z_partner: &Tensor,
    lambda: f64,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<ChunkOut> {
    let generator = &net.model.generator;
    let disc = &net.model.discriminator;
    let scene_weight = 1.0 / step.scenes as f64;
    let row_weight = 1.0 / step.rows as f64;
    let adversarial = cfg.gan_weight > 0.0;
    // With lambda = 1 the partner is never evaluated; any generator of the
    // right shape stands in.
    let partner = match partner {
        Some(p) => p,
        None if lambda == 1.0 => generator,
        None => return Err(Error::Config("reciprocal step without a partner network".into())),
    };
    let outs = exec.try_map(step.chunks.len(), |ci| -> Result<ChunkOut> {
        let sub = step.batch.slice(step.chunks[ci].clone());
        let rows = step.rows_of(&step.chunks[ci]);
        let mut g = Graph::new();
        let own = generator.params.bind(&mut g, true);
        let other = partner.params.bind(&mut g, false);
        let input = sub.bind_input(&mut g);
        let target = sub.bind_target(&mut g);
        let ctx = g.constant(sub.context.clone());
        let zo = g.constant(slice_rows(z_own, rows.clone()));
        let zp = g.constant(slice_rows(z_partner, rows));
        let terms = losses::reciprocal_objective(
            &mut g,
            NetRef {
                generator,
                params: &own,
                noise: zo,
            },
            NetRef {
                generator: partner,
                params: &other,
                noise: zp,
            },
            &input,
            &target,
            ctx,
            &sub.layout,
            lambda,
            scene_weight,
        )?;
        let adv = if adversarial {
            let dp = disc.params.bind(&mut g, false);
            let score = disc.forward(&mut g, &dp, &full_trajectory(&input, &terms.prediction.positions))?;
            let c = g.clamp_min(score, LOG_CLAMP);
            let l = g.log(c)?;
            let s = g.sum(l);
            Some(g.scale(s, -row_weight))
        } else {
            None
        };
        let total = losses::total_loss(&mut g, adv, terms.objective, cfg.gan_weight)?;
        g.backward(total)?;
        let val = |v: Var| g.value(v).item().unwrap_or(f64::NAN);
        Ok(ChunkOut {
            grads: generator.params.grads(&g, &own),
            direct: val(terms.direct),
            reconstruction: terms.reconstruction.map(val),
            adv: adv.map_or(0.0, val),
            total: val(total),
        })
    })?;
    let mut grads = reduce_grads(&outs.iter().map(|o| o.grads.clone()).collect::<Vec<_>>());
    let sum = |f: fn(&ChunkOut) -> f64| outs.iter().map(f).sum::<f64>();
    let summary = ChunkOut {
        grads: Vec::new(),
        direct: sum(|o| o.direct),
        reconstruction: outs[0].reconstruction.map(|_| sum(|o| o.reconstruction.unwrap_or(0.0))),
        adv: sum(|o| o.adv),
        total: sum(|o| o.total),
    };
    clip_grad_norm(&mut grads, cfg.clip_norm);
    adam_step(&mut net.model.generator.params, &grads, &mut net.gen_opt, &cfg.adam)?;
    Ok(summary)
}

/// One optimizer step of `net` (discriminator, then generator) on `episodes`.
#[allow(clippy::too_many_arguments)]
fn network_step<E: Episode>(
    net: &mut Network,
    partner: Option<&Generator>,
    episodes: &[&E],
    role: Role,
    epoch: usize,
    batch: usize,
    lambda: f64,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<StepRecord> {
    let pb = PairedBatch::new(episodes, net.model.config().context_dim)?;
    let step = StepInput {
        chunks: batches(episodes.len(), cfg.chunk_scenes),
        scenes: episodes.len(),
        rows: pb.layout.rows(),
        batch: &pb,
    };
    let nd = net.model.config().noise_dim;
    let mut rng = stream_rng(cfg.seed, PURPOSE_NOISE, epoch, batch, role.index());
    let z_disc = sample_noise(&mut rng, step.rows, nd);
    let z_own = sample_noise(&mut rng, step.rows, nd);
    let z_partner = sample_noise(&mut rng, step.rows, nd);

    let disc_loss = if cfg.gan_weight > 0.0 {
        discriminator_update(net, &step, &z_disc, cfg, exec)?
    } else {
        0.0
    };
    let out = generator_update(net, partner, &step, &z_own, &z_partner, lambda, cfg, exec)?;
    check_loss(epoch, out.total, cfg)?;
    check_loss(epoch, disc_loss, cfg)?;
    Ok(StepRecord {
        epoch,
        batch,
        role,
        lambda,
        disc_loss,
        adv_loss: out.adv,
        direct: out.direct,
        reconstruction: out.reconstruction,
        total: out.total,
    })
}

/// Trains one network alone with the `lambda = 1` objective for
/// `cfg.pretrain_epochs` epochs. The backward network must be given
/// time-reversed samples. Returns one record per batch.
pub fn pretrain<E: Episode>(net: &mut Network, samples: &[E], role: Role, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    pretrain_with(net, samples, role, cfg, Execution::default())
}

pub fn pretrain_with<E: Episode>(
    net: &mut Network,
    samples: &[E],
    role: Role,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if net.model.direction() != role.direction() {
        return Err(Error::Config(format!("{} role does not match network direction", role.as_str())));
    }
    let mut history = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let order = epoch_order(cfg.seed, epoch, samples.len());
        for (b, range) in batches(samples.len(), cfg.batch_size).into_iter().enumerate() {
            let eps: Vec<&E> = order[range].iter().map(|&i| &samples[i]).collect();
            history.push(network_step(net, None, &eps, role, epoch, b, 1.0, cfg, exec)?);
        }
    }
    Ok(history)
}

/// Runs the remaining epochs of `pair.train_config` on `samples`.
///
/// Epochs below `pretrain_epochs` train both networks independently; later
/// epochs alternate a θ-step (backward network frozen) and a φ-step (forward
/// network frozen) according to the configured alternation.
pub fn reciprocal_train(pair: &mut ReciprocalPair, samples: &[SceneSample]) -> Result<()> {
    reciprocal_train_with(pair, samples, Execution::default(), None)
}

/// Like [`reciprocal_train`], stopping after `until_epoch` completed epochs if given.
pub fn reciprocal_train_with(
    pair: &mut ReciprocalPair,
    samples: &[SceneSample],
    exec: Execution,
    until_epoch: Option<usize>,
) -> Result<()> {
    let cfg = pair.train_config.clone();
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let reversed: Vec<BackwardSample> = samples.iter().map(time_reverse).collect();
    let end = until_epoch.map_or(cfg.epochs, |e| e.min(cfg.epochs));
    let ranges = batches(samples.len(), cfg.batch_size);
    for epoch in pair.epochs_done..end {
        let lambda = cfg.lambda_at(epoch);
        let order = epoch_order(cfg.seed, epoch, samples.len());
        let fwd_batch: Vec<Vec<&SceneSample>> = ranges
            .iter()
            .map(|r| order[r.clone()].iter().map(|&i| &samples[i]).collect())
            .collect();
        let bwd_batch: Vec<Vec<&BackwardSample>> = ranges
            .iter()
            .map(|r| order[r.clone()].iter().map(|&i| &reversed[i]).collect())
            .collect();
        let mut records = Vec::with_capacity(2 * ranges.len());
        let theta = |pair: &mut ReciprocalPair, b: usize| {
            let partner = (lambda < 1.0).then(|| pair.backward.model.generator.clone());
            network_step(&mut pair.forward, partner.as_ref(), &fwd_batch[b], Role::Forward, epoch, b, lambda, &cfg, exec)
        };
        let phi = |pair: &mut ReciprocalPair, b: usize| {
            let partner = (lambda < 1.0).then(|| pair.forward.model.generator.clone());
            network_step(&mut pair.backward, partner.as_ref(), &bwd_batch[b], Role::Backward, epoch, b, lambda, &cfg, exec)
        };
        match cfg.alternation {
            Alternation::PerBatch => {
                for b in 0..ranges.len() {
                    records.push(theta(pair, b)?);
                    records.push(phi(pair, b)?);
                }
            }
            Alternation::PerEpoch => {
                for b in 0..ranges.len() {
                    records.push(theta(pair, b)?);
                }
                for b in 0..ranges.len() {
                    records.push(phi(pair, b)?);
                }
            }
        }
        pair.history.extend(records);
        pair.epochs_done = epoch + 1;
    }
    Ok(())
}

/// Mean per-scene reconstruction error `||X - G(F(X))||` with zero noise.
pub fn reconstruction_error(pair: &ReciprocalPair, samples: &[SceneSample], exec: Execution) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("no samples".into()));
    }
    let f = pair.forward.generator();
    let b = pair.backward.generator();
    let per = exec.try_map(samples.len(), |i| -> Result<f64> {
        let s = &samples[i];
        let batch = PairedBatch::new(&[s], f.config.context_dim)?;
        let rows = batch.layout.rows();
        let mut g = Graph::new();
        let fp = f.params.bind(&mut g, false);
        let bp = b.params.bind(&mut g, false);
        let input = batch.bind_input(&mut g);
        let ctx = g.constant(batch.context.clone());
        let z = g.constant(Tensor::zeros(vec![rows, f.config.noise_dim]));
        let zb = g.constant(Tensor::zeros(vec![rows, b.config.noise_dim]));
        let pred = f.forward(&mut g, &fp, &input, &batch.layout, ctx, z)?;
        let rev: Vec<Var> = pred.positions.iter().rev().copied().collect();
        let back = b.forward(&mut g, &bp, &rev, &batch.layout, ctx, zb)?;
        let rev_input: Vec<Var> = input.iter().rev().copied().collect();
        let e = losses::weighted_l2(&mut g, &rev_input, &back.positions, &batch.layout, 1.0)?;
        Ok(g.value(e).item().unwrap_or(f64::NAN))
    })?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
