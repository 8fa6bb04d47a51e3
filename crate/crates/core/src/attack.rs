//! Reciprocal attack: refine a forward prediction by descending the backward
//! network's matching error, then exponentially average the iterates.
//!
//! The attacked variable is the predicted displacement sequence (anchored at
//! the last observed position), which is what the backward network encodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses;
use crate::model::{scene_points, Generator, PairedBatch};
use crate::tensor::Tensor;
use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Signed step size; negative values descend the matching error.
    pub epsilon: f64,
    pub iterations: usize,
    pub alpha: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: -0.05,
            iterations: 20,
            alpha: 0.1,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("attack iterations must be >= 1".into()));
        }
        if !self.alpha.is_finite() || !self.epsilon.is_finite() {
            return Err(Error::Config("attack alpha and epsilon must be finite".into()));
        }
        Ok(())
    }
}

/// Something whose matching error can be differentiated w.r.t. a flat iterate.
pub trait MatchingObjective {
    fn error_and_grad(&self, y: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn error(&self, y: &[f64]) -> Result<f64> {
        Ok(self.error_and_grad(y)?.0)
    }
}

/// `y_next = y + epsilon * grad E(y)`; also returns `E(y)`.
pub fn attack_step(objective: &impl MatchingObjective, y: &[f64], epsilon: f64) -> Result<(Vec<f64>, f64)> {
    let (e, grad) = objective.error_and_grad(y)?;
    if grad.len() != y.len() {
        return Err(Error::Shape(format!("gradient length {} != iterate length {}", grad.len(), y.len())));
    }
    if !e.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matching-error gradient".into()));
    }
    Ok((y.iter().zip(&grad).map(|(a, g)| a + epsilon * g).collect(), e))
}

/// `sum_m exp(alpha m) y_m / sum_m exp(alpha m)` with `m = 1..=len`.
pub fn exp_average(iterates: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>> {
    let n = iterates.len();
    if n == 0 {
        return Err(Error::Config("exp_average of an empty iterate list".into()));
    }
    let dim = iterates[0].len();
    if iterates.iter().any(|y| y.len() != dim) {
        return Err(Error::Shape("iterates differ in length".into()));
    }
    // Shifted exponents keep the weights finite; the ratio is unchanged.
    let top = if alpha >= 0.0 { n as f64 } else { 1.0 };
    let w: Vec<f64> = (1..=n).map(|m| (alpha * (m as f64 - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; dim];
    for (y, wm) in iterates.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(y) {
            *o += wm * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Matching error `||X - G(reverse(Y))||` of one scene, with `Y` given as
/// time-major displacements from the last observed positions.
pub struct BackwardMatch<'a> {
    pub backward: &'a Generator,
    /// Time-major `[agents, 2]` observed positions `X`.
    batch: PairedBatch,
    anchor: Vec<Point>,
    noise: Tensor,
}

impl<'a> BackwardMatch<'a> {
    /// `observed` is agent-major; `noise` is the backward network's `[agents, noise_dim]` noise.
    pub fn new(backward: &'a Generator, observed: &[Vec<Point>], context: Option<&[f64]>, noise: Tensor) -> Result<Self> {
        let n = observed.len();
        if n == 0 || observed.iter().any(|o| o.len() != backward.direction.out_len) {
            return Err(Error::Shape(format!(
                "observed trajectories must have {} steps",
                backward.direction.out_len
            )));
        }
        let scene = crate::data::SceneSample {
            agent_ids: (0..n as u64).collect(),
            observed: observed.to_vec(),
            future: vec![vec![[0.0, 0.0]; backward.direction.in_len]; n],
            context: context.map(<[f64]>::to_vec),
        };
        let batch = PairedBatch::new(&[&scene], backward.config.context_dim)?;
        Ok(Self {
            backward,
            anchor: observed.iter().map(|o| *o.last().expect("non-empty")).collect(),
            batch,
            noise,
        })
    }

    pub fn agents(&self) -> usize {
        self.anchor.len()
    }

    /// Flat time-major displacements of agent-major absolute positions.
    pub fn encode(&self, positions: &[Vec<Point>]) -> Vec<f64> {
        let steps = positions.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(steps * positions.len() * 2);
        for t in 0..steps {
            for (a, p) in positions.iter().enumerate() {
                let prev = if t == 0 { self.anchor[a] } else { p[t - 1] };
                out.push(p[t][0] - prev[0]);
                out.push(p[t][1] - prev[1]);
            }
        }
        out
    }

    /// Inverse of [`BackwardMatch::encode`].
    pub fn decode(&self, y: &[f64]) -> Vec<Vec<Point>> {
        let n = self.agents();
        let steps = y.len() / (2 * n);
        (0..n)
            .map(|a| {
                let mut pos = self.anchor[a];
                (0..steps)
                    .map(|t| {
                        let k = 2 * (t * n + a);
                        pos = [pos[0] + y[k], pos[1] + y[k + 1]];
                        pos
                    })
                    .collect()
            })
            .collect()
    }
}

impl MatchingObjective for BackwardMatch<'_> {
    fn error_and_grad(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.agents();
        let steps = self.backward.direction.in_len;
        if y.len() != steps * n * 2 {
            return Err(Error::Shape(format!("iterate length {} != {}", y.len(), steps * n * 2)));
        }
        let mut g = Graph::new();
        let p = self.backward.params.bind(&mut g, false);
        let deltas: Vec<_> = y
            .chunks(2 * n)
            .map(|c| g.leaf(Tensor::new(vec![n, 2], c.to_vec()).expect("n x 2"), true))
            .collect();
        let anchor = g.constant(Tensor::from_rows(&self.anchor.iter().map(|a| a.to_vec()).collect::<Vec<_>>())?);
        let mut positions = Vec::with_capacity(steps);
        let mut pos = anchor;
        for &d in &deltas {
            pos = g.add(pos, d)?;
            positions.push(pos);
        }
        positions.reverse();
        let ctx = g.constant(self.batch.context.clone());
        let z = g.constant(self.noise.clone());
        let out = self.backward.forward(&mut g, &p, &positions, &self.batch.layout, ctx, z)?;
        let x_rev: Vec<_> = self.batch.input.iter().rev().map(|t| g.constant(t.clone())).collect();
        let e = losses::weighted_l2(&mut g, &x_rev, &out.positions, &self.batch.layout, 1.0)?;
        g.backward(e)?;
        let mut grad = Vec::with_capacity(y.len());
        for &d in &deltas {
            match g.grad(d) {
                Some(gd) => grad.extend_from_slice(gd),
                None => grad.extend(std::iter::repeat_n(0.0, 2 * n)),
            }
        }
        Ok((g.value(e).item().unwrap_or(f64::NAN), grad))
    }
}

/// Iterates, matching errors and the averaged result of one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackState {
    /// `Y^0..Y^M` as flat displacements.
    pub iterates: Vec<Vec<f64>>,
    /// `E^0..E^M`.
    pub errors: Vec<f64>,
    /// Exponential average of `Y^1..Y^M` (or `Y^0` if no step succeeded).
    pub refined: Vec<f64>,
    /// Iteration whose gradient was non-finite, if the attack stopped early.
    pub truncated_at: Option<usize>,
}

/// Runs `cfg.iterations` attack steps from `y0` and averages the iterates.
pub fn run_attack(objective: &impl MatchingObjective, y0: Vec<f64>, cfg: &AttackConfig) -> Result<AttackState> {
    cfg.validate()?;
    let mut iterates = vec![y0];
    let mut errors = Vec::with_capacity(cfg.iterations + 1);
    let mut truncated_at = None;
    for m in 1..=cfg.iterations {
        match attack_step(objective, &iterates[m - 1], cfg.epsilon) {
            Ok((next, e)) => {
                errors.push(e);
                iterates.push(next);
            }
            Err(Error::Numeric(_)) => {
                truncated_at = Some(m);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    // E of the last kept iterate; a non-finite value is recorded as is.
    match objective.error(iterates.last().expect("y0")) {
        Ok(e) => errors.push(e),
        Err(Error::Numeric(_)) => errors.push(f64::NAN),
        Err(e) => return Err(e),
    }
    let refined = if iterates.len() > 1 {
        exp_average(&iterates[1..], cfg.alpha)?
    } else {
        iterates[0].clone()
    };
    Ok(AttackState {
        iterates,
        errors,
        refined,
        truncated_at,
    })
}

/// Matched prediction of one scene: `Y^0 = F(X)` with noise `z_forward`,
/// refined against the backward network (noise `z_backward`, held fixed).
/// Returns agent-major refined positions and the attack state.
pub fn matched_predict(
    forward: &Generator,
    backward: &Generator,
    observed: &[Vec<Point>],
    context: Option<&[f64]>,
    z_forward: &Tensor,
    z_backward: Tensor,
    cfg: &AttackConfig,
) -> Result<(Vec<Vec<Point>>, AttackState)> {
    if forward.direction.reversed() != backward.direction {
        return Err(Error::Config("backward network does not mirror the forward network".into()));
    }
    let n = observed.len();
    let scene = crate::data::SceneSample {
        agent_ids: (0..n as u64).collect(),
        observed: observed.to_vec(),
        future: vec![vec![[0.0, 0.0]; forward.direction.out_len]; n],
        context: context.map(<[f64]>::to_vec),
    };
    let batch = PairedBatch::new(&[&scene], forward.config.context_dim)?;
    let raw = forward.predict(&batch, z_forward)?;
    let y0_positions = scene_points(&raw, 0..n);
    let objective = BackwardMatch::new(backward, observed, context, z_backward)?;
    let state = run_attack(&objective, objective.encode(&y0_positions), cfg)?;
    Ok((objective.decode(&state.refined), state))
}
