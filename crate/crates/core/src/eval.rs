//! Scene-parallel evaluation: best-of-K metrics, the linear comparator and
//! attack (matched prediction) evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig, BackwardMatch};
use crate::baseline::linear_predict;
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::metrics::{ade, best_of_k, collision_pct, fde, frames_of, EvalReport, SceneReport, COLLISION_THRESHOLD};
use crate::model::{sample_noise, scene_points, Generator, PairedBatch};
use crate::par::Execution;
use crate::tensor::Tensor;
use crate::Point;

const PURPOSE_EVAL: u64 = 4;
const PURPOSE_ATTACK: u64 = 5;

fn scene_rng(seed: u64, purpose: u64, scene: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 60) | scene as u64);
    rng
}

/// `k` samples of the generator for one scene, each agent-major. All draws
/// run in one batch of `k` copies of the scene.
pub fn sample_predictions(generator: &Generator, scene: &SceneSample, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<Point>>>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let copies: Vec<&SceneSample> = vec![scene; k];
    let batch = PairedBatch::new(&copies, generator.config.context_dim)?;
    let z = sample_noise(rng, batch.layout.rows(), generator.config.noise_dim);
    let out = generator.predict(&batch, &z)?;
    Ok(batch.layout.groups().iter().map(|g| scene_points(&out, g.clone())).collect())
}

fn scene_report(scene: usize, pred: &[Vec<Point>], gt: &[Vec<Point>], best_index: usize) -> Result<SceneReport> {
    Ok(SceneReport {
        scene,
        agents: gt.len(),
        ade: ade(pred, gt)?,
        fde: fde(pred, gt)?,
        collision_pct: collision_pct(&frames_of(pred), COLLISION_THRESHOLD),
        best_index,
    })
}

/// Best-of-`k` report and the selected prediction of every scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<Vec<Vec<Point>>>,
}

/// Best-of-`k` evaluation; scene `i` draws its noise from `(seed, i)`.
pub fn evaluate(generator: &Generator, samples: &[SceneSample], k: usize, seed: u64, exec: Execution) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let per = exec.try_map(samples.len(), |i| -> Result<(SceneReport, Vec<Vec<Point>>)> {
        let s = &samples[i];
        let draws = sample_predictions(generator, s, k, &mut scene_rng(seed, PURPOSE_EVAL, i))?;
        let best = best_of_k(&draws, &s.future)?;
        let pred = draws.into_iter().nth(best.index).expect("best index in range");
        Ok((scene_report(i, &pred, &s.future, best.index)?, pred))
    })?;
    let (scenes, predictions): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(Evaluation {
        report: EvalReport::from_scenes(k, scenes),
        predictions,
    })
}

/// Report of the least-squares linear extrapolator.
pub fn evaluate_linear(samples: &[SceneSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let mut scenes = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let pred = linear_predict(&s.observed, s.pred_len());
        scenes.push(scene_report(i, &pred, &s.future, 0)?);
        predictions.push(pred);
    }
    Ok(Evaluation {
        report: EvalReport::from_scenes(1, scenes),
        predictions,
    })
}

/// Matching error and accuracy of every iterate of one scene's attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCurve {
    pub scene: usize,
    /// `E^0..E^M`.
    pub errors: Vec<f64>,
    /// ADE of `Y^0..Y^M` against the ground truth.
    pub ade: Vec<f64>,
    pub truncated_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackEvaluation {
    pub pre: Evaluation,
    pub post: Evaluation,
    pub curves: Vec<AttackCurve>,
}

impl AttackEvaluation {
    /// Fraction of scenes whose final matching error does not exceed the initial one.
    pub fn improved_fraction(&self) -> f64 {
        let ok = self
            .curves
            .iter()
            .filter(|c| matches!((c.errors.first(), c.errors.last()), (Some(a), Some(b)) if b <= a))
            .count();
        ok as f64 / self.curves.len().max(1) as f64
    }
}

/// Single-sample predictions before and after the reciprocal attack.
///
/// The forward noise of scene `i` comes from `(seed, i)`; the backward
/// network runs with zero noise throughout the attack.
pub fn attack_evaluate(
    forward: &Generator,
    backward: &Generator,
    samples: &[SceneSample],
    cfg: &AttackConfig,
    seed: u64,
    exec: Execution,
) -> Result<AttackEvaluation> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    if forward.direction.reversed() != backward.direction {
        return Err(Error::Config("backward network does not mirror the forward network".into()));
    }
    type Out = (SceneReport, Vec<Vec<Point>>, SceneReport, Vec<Vec<Point>>, AttackCurve);
    let per = exec.try_map(samples.len(), |i| -> Result<Out> {
        let s = &samples[i];
        let n = s.agent_count();
        let mut rng = scene_rng(seed, PURPOSE_ATTACK, i);
        let batch = PairedBatch::new(&[s], forward.config.context_dim)?;
        let z = sample_noise(&mut rng, n, forward.config.noise_dim);
        let raw = scene_points(&forward.predict(&batch, &z)?, 0..n);
        let objective = BackwardMatch::new(
            backward,
            &s.observed,
            s.context.as_deref(),
            Tensor::zeros(vec![n, backward.config.noise_dim]),
        )?;
        let state = run_attack(&objective, objective.encode(&raw), cfg)?;
        let refined = objective.decode(&state.refined);
        let ades = state
            .iterates
            .iter()
            .map(|y| ade(&objective.decode(y), &s.future))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            scene_report(i, &raw, &s.future, 0)?,
            raw,
            scene_report(i, &refined, &s.future, 0)?,
            refined,
            AttackCurve {
                scene: i,
                errors: state.errors,
                ade: ades,
                truncated_at: state.truncated_at,
            },
        ))
    })?;
    let mut pre = (Vec::new(), Vec::new());
    let mut post = (Vec::new(), Vec::new());
    let mut curves = Vec::new();
    for (a, b, c, d, e) in per {
        pre.0.push(a);
        pre.1.push(b);
        post.0.push(c);
        post.1.push(d);
        curves.push(e);
    }
    Ok(AttackEvaluation {
        pre: Evaluation {
            report: EvalReport::from_scenes(1, pre.0),
            predictions: pre.1,
        },
        post: Evaluation {
            report: EvalReport::from_scenes(1, post.0),
            predictions: post.1,
        },
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_social_force, SocialForceConfig};
    use crate::model::{Direction, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 5,
            disc_hidden_dim: 3,
            pool_dim: 3,
            noise_dim: 2,
            context_dim: 1,
            ..Default::default()
        }
    }

    fn data() -> Vec<SceneSample> {
        generate_social_force(&SocialForceConfig {
            n_scenes: 5,
            agents_per_scene: 3,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    fn gens() -> (Generator, Generator) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (
            Generator::new(&tiny(), Direction::FORWARD, &mut rng),
            Generator::new(&tiny(), Direction::BACKWARD, &mut rng),
        )
    }

    #[test]
    fn best_of_k_improves_with_k_and_is_deterministic() {
        let (f, _) = gens();
        let s = data();
        let one = evaluate(&f, &s, 1, 3, Execution::Sequential).unwrap();
        let many = evaluate(&f, &s, 8, 3, Execution::Parallel).unwrap();
        assert_eq!(many, evaluate(&f, &s, 8, 3, Execution::Sequential).unwrap());
        assert!(many.report.ade <= one.report.ade);
        assert_eq!(one.report.k, 1);
        assert!(evaluate(&f, &s, 0, 3, Execution::Sequential).is_err());
    }

    #[test]
    fn linear_is_exact_on_straight_constant_speed_scenes() {
        let scene = SceneSample {
            agent_ids: vec![0],
            observed: vec![(0..8).map(|t| [t as f64 * 0.5, 1.0]).collect()],
            future: vec![(8..20).map(|t| [t as f64 * 0.5, 1.0]).collect()],
            context: None,
        };
        let r = evaluate_linear(&[scene]).unwrap().report;
        assert!(r.ade < 1e-12 && r.fde < 1e-12);
    }

    #[test]
    fn attack_evaluation_contract() {
        let (f, b) = gens();
        let s = data();
        let zero = AttackConfig {
            iterations: 1,
            epsilon: 0.0,
            alpha: 0.1,
        };
        let ev = attack_evaluate(&f, &b, &s, &zero, 1, Execution::Sequential).unwrap();
        assert_eq!(ev.pre.report.ade, ev.post.report.ade);
        let ev = attack_evaluate(&f, &b, &s, &AttackConfig::default(), 1, Execution::Parallel).unwrap();
        assert_eq!(ev.curves.len(), 5);
        assert!(ev.curves.iter().all(|c| c.errors.len() == 21 && c.ade.len() == 21));
        assert!((0.0..=1.0).contains(&ev.improved_fraction()));
        assert!(attack_evaluate(&b, &f, &s, &zero, 1, Execution::Sequential).is_err());
    }
}
