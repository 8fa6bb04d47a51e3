//! Prediction, reciprocal and adversarial objectives.
//!
//! Batch objectives are sums over scenes (or agents) multiplied by a caller
//! supplied `weight`, so a batch split into chunks produces the same total
//! when each chunk uses `1 / batch_size` as its weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{BatchLayout, GenOutput, Generator};
use crate::nn::Bound;
use crate::Point;

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the direct prediction term; `1 - lambda` weights reconstruction.
    pub lambda: f64,
    /// Multiplier on the adversarial generator loss.
    pub gan_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gan_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.gan_weight.is_finite() && self.gan_weight >= 0.0) {
            return Err(Error::Config(format!("gan_weight must be finite and >= 0, got {}", self.gan_weight)));
        }
        Ok(())
    }
}

/// L2 norm of the flattened coordinate difference of two agent-major trajectory sets.
pub fn l2_traj(a: &[Vec<Point>], b: &[Vec<Point>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Shape("l2_traj: trajectories differ in agent count or length".into()));
    }
    let sq: f64 = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum();
    Ok(sq.sqrt())
}

/// `lambda * direct + (1 - lambda) * reconstruction`.
pub fn reciprocal_combine(lambda: f64, direct: f64, reconstruction: f64) -> f64 {
    lambda * direct + (1.0 - lambda) * reconstruction
}

/// Per-scene L2 norms of `a - b` over all agents and steps, as a `[scenes]` vector.
pub fn scene_l2(g: &mut Graph, a: &[Var], b: &[Var], layout: &BatchLayout) -> Result<Var> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("scene_l2: {} vs {} steps", a.len(), b.len())));
    }
    let diffs = a.iter().zip(b).map(|(&x, &y)| g.sub(x, y)).collect::<Result<Vec<_>, _>>()?;
    let flat = g.concat_cols(&diffs)?;
    Ok(g.segment_l2_norm(flat, layout.groups().to_vec())?)
}

/// `weight * sum_scenes ||a - b||`.
pub fn weighted_l2(g: &mut Graph, a: &[Var], b: &[Var], layout: &BatchLayout, weight: f64) -> Result<Var> {
    let norms = scene_l2(g, a, b, layout)?;
    let s = g.sum(norms);
    Ok(g.scale(s, weight))
}

/// A network as seen by an objective: its generator and a binding of its parameters.
#[derive(Clone, Copy)]
pub struct NetRef<'a> {
    pub generator: &'a Generator,
    pub params: &'a Bound,
    /// `[rows, noise_dim]` noise for this network.
    pub noise: Var,
}

/// Graph nodes of one reciprocal objective evaluation.
#[derive(Clone, Debug)]
pub struct ReciprocalTerms {
    /// Prediction of the first network.
    pub prediction: GenOutput,
    /// `weight * sum ||target - first(input)||`.
    pub direct: Var,
    /// `weight * sum ||reverse(input) - second(reverse(first(input)))||`,
    /// absent when `lambda == 1`.
    pub reconstruction: Option<Var>,
    /// `lambda * direct + (1 - lambda) * reconstruction`.
    pub objective: Var,
}

/// Reciprocal objective of `first` regularized by `second`.
///
/// `input` and `target` are time-ordered for `first`. The second network
/// reads the reversed prediction and is compared with the reversed input.
/// With `J+`, `first = F`, `second = G`; with `J-`, `first = G` on the
/// reversed future and `second = F`.
#[allow(clippy::too_many_arguments)]
pub fn reciprocal_objective(
    g: &mut Graph,
    first: NetRef<'_>,
    second: NetRef<'_>,
    input: &[Var],
    target: &[Var],
    context: Var,
    layout: &BatchLayout,
    lambda: f64,
    weight: f64,
) -> Result<ReciprocalTerms> {
    let prediction = first
        .generator
        .forward(g, first.params, input, layout, context, first.noise)?;
    let direct = weighted_l2(g, target, &prediction.positions, layout, weight)?;
    if lambda == 1.0 {
        let objective = g.scale(direct, 1.0);
        return Ok(ReciprocalTerms {
            prediction,
            direct,
            reconstruction: None,
            objective,
        });
    }
    let reversed_pred: Vec<Var> = prediction.positions.iter().rev().copied().collect();
    let back = second
        .generator
        .forward(g, second.params, &reversed_pred, layout, context, second.noise)?;
    let reversed_input: Vec<Var> = input.iter().rev().copied().collect();
    let reconstruction = weighted_l2(g, &reversed_input, &back.positions, layout, weight)?;
    let a = g.scale(direct, lambda);
    let b = g.scale(reconstruction, 1.0 - lambda);
    let objective = g.add(a, b)?;
    Ok(ReciprocalTerms {
        prediction,
        direct,
        reconstruction: Some(reconstruction),
        objective,
    })
}

/// `J+[theta]` for the forward network `f` with the backward network `b` as partner.
#[allow(clippy::too_many_arguments)]
pub fn j_forward(
    g: &mut Graph,
    observed: &[Var],
    future: &[Var],
    f: NetRef<'_>,
    b: NetRef<'_>,
    context: Var,
    layout: &BatchLayout,
    cfg: &LossConfig,
    weight: f64,
) -> Result<ReciprocalTerms> {
    reciprocal_objective(g, f, b, observed, future, context, layout, cfg.lambda, weight)
}

/// `J-[phi]`: the mirror of [`j_forward`] with roles and time direction swapped.
/// `observed` and `future` are in forward time order.
#[allow(clippy::too_many_arguments)]
pub fn j_backward(
    g: &mut Graph,
    observed: &[Var],
    future: &[Var],
    f: NetRef<'_>,
    b: NetRef<'_>,
    context: Var,
    layout: &BatchLayout,
    cfg: &LossConfig,
    weight: f64,
) -> Result<ReciprocalTerms> {
    let rev_future: Vec<Var> = future.iter().rev().copied().collect();
    let rev_observed: Vec<Var> = observed.iter().rev().copied().collect();
    reciprocal_objective(g, b, f, &rev_future, &rev_observed, context, layout, cfg.lambda, weight)
}

/// Discriminator and non-saturating generator losses from `[rows, 1]` scores:
/// `d = weight * sum(-log D(real) - log(1 - D(fake)))`,
/// `g = weight * sum(-log D(fake))`, with probabilities floored at [`LOG_CLAMP`].
pub fn gan_losses(g: &mut Graph, d_real: Var, d_fake: Var, weight: f64) -> Result<(Var, Var)> {
    let d_loss = {
        let lr = neg_log(g, d_real)?;
        let one_minus = g.scale(d_fake, -1.0);
        let one_minus = g.add_scalar(one_minus, 1.0);
        let lf = neg_log(g, one_minus)?;
        let sum = g.add(lr, lf)?;
        g.scale(sum, weight)
    };
    let g_loss = {
        let l = neg_log(g, d_fake)?;
        g.scale(l, weight)
    };
    Ok((d_loss, g_loss))
}

/// Discriminator loss alone (only real/fake scores, no generator term).
pub fn discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var, weight: f64) -> Result<Var> {
    Ok(gan_losses(g, d_real, d_fake, weight)?.0)
}

fn neg_log(g: &mut Graph, p: Var) -> Result<Var> {
    let c = g.clamp_min(p, LOG_CLAMP);
    let l = g.log(c)?;
    let s = g.sum(l);
    Ok(g.scale(s, -1.0))
}

/// Scalar form of [`gan_losses`] for a single real and fake score.
pub fn gan_losses_scalar(d_real: f64, d_fake: f64) -> (f64, f64) {
    let nl = |p: f64| -p.max(LOG_CLAMP).ln();
    (nl(d_real) + nl(1.0 - d_fake), nl(d_fake))
}

/// Overall generator objective `gan_weight * g_loss + J`.
pub fn total_loss(g: &mut Graph, gan_g_loss: Option<Var>, reciprocal: Var, gan_weight: f64) -> Result<Var> {
    match gan_g_loss {
        Some(l) if gan_weight != 0.0 => {
            let w = g.scale(l, gan_weight);
            Ok(g.add(w, reciprocal)?)
        }
        _ => Ok(reciprocal),
    }
}

/// Scalar form of [`total_loss`] returning `(L_theta, L_phi)`.
pub fn total_losses(g_theta: f64, j_plus: f64, g_phi: f64, j_minus: f64, gan_weight: f64) -> (f64, f64) {
    (gan_weight * g_theta + j_plus, gan_weight * g_phi + j_minus)
}
