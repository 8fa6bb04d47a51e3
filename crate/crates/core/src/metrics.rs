//! ADE, FDE, best-of-K selection and near-collision percentage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Distance below which two agents count as colliding (strict).
pub const COLLISION_THRESHOLD: f64 = 0.1;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted agents vs {} ground truth", pred.len(), gt.len())));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.is_empty() || p.len() != g.len() {
            return Err(Error::Shape(format!("{} predicted steps vs {} ground truth", p.len(), g.len())));
        }
    }
    Ok(())
}

/// Mean Euclidean error over agents and predicted steps.
pub fn ade(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> Result<f64> {
    check(pred, gt)?;
    let (mut total, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.iter().zip(g) {
            total += dist(*a, *b);
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Mean Euclidean error at the final predicted step.
pub fn fde(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> Result<f64> {
    check(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| dist(*p.last().unwrap(), *g.last().unwrap()))
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestOfK {
    pub index: usize,
    pub ade: f64,
    /// FDE of the ADE-minimizing sample.
    pub fde: f64,
}

/// Picks the sample with the lowest ADE (first on ties).
pub fn best_of_k(samples: &[Vec<Vec<Point>>], gt: &[Vec<Point>]) -> Result<BestOfK> {
    if samples.is_empty() {
        return Err(Error::Config("best_of_k needs at least one sample".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in samples.iter().enumerate() {
        let a = ade(s, gt)?;
        if best.is_none_or(|(_, b)| a < b) {
            best = Some((i, a));
        }
    }
    let (index, ade) = best.expect("non-empty");
    Ok(BestOfK {
        index,
        ade,
        fde: fde(&samples[index], gt)?,
    })
}

/// Percentage of agents within `threshold` (strictly) of another agent in
/// one frame. A frame with fewer than two agents scores 0.
pub fn frame_collision_pct(frame: &[Point], threshold: f64) -> f64 {
    let n = frame.len();
    if n < 2 {
        return 0.0;
    }
    let mut hit = vec![false; n];
    for i in 0..n {
        for j in i + 1..n {
            if dist(frame[i], frame[j]) < threshold {
                hit[i] = true;
                hit[j] = true;
            }
        }
    }
    100.0 * hit.iter().filter(|&&h| h).count() as f64 / n as f64
}

/// Mean of [`frame_collision_pct`] over frames (frame-major input).
pub fn collision_pct(frames: &[Vec<Point>], threshold: f64) -> f64 {
    if frames.is_empty() {
        return 0.0;
    }
    frames.iter().map(|f| frame_collision_pct(f, threshold)).sum::<f64>() / frames.len() as f64
}

/// Transposes agent-major trajectories of equal length into frames.
pub fn frames_of(trajectories: &[Vec<Point>]) -> Vec<Vec<Point>> {
    let steps = trajectories.first().map_or(0, Vec::len);
    (0..steps).map(|t| trajectories.iter().map(|a| a[t]).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: usize,
    pub agents: usize,
    pub ade: f64,
    pub fde: f64,
    pub collision_pct: f64,
    pub best_index: usize,
}

/// Aggregated metrics over a set of scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Agent-weighted mean ADE in meters.
    pub ade: f64,
    /// Agent-weighted mean FDE in meters.
    pub fde: f64,
    /// Mean near-collision percentage over all predicted frames.
    pub collision_pct: f64,
    pub k: usize,
    pub scenes: Vec<SceneReport>,
}

impl EvalReport {
    pub fn from_scenes(k: usize, scenes: Vec<SceneReport>) -> Self {
        let agents: usize = scenes.iter().map(|s| s.agents).sum();
        let w = |f: fn(&SceneReport) -> f64| {
            if agents == 0 {
                0.0
            } else {
                scenes.iter().map(|s| f(s) * s.agents as f64).sum::<f64>() / agents as f64
            }
        };
        let collision_pct = if scenes.is_empty() {
            0.0
        } else {
            scenes.iter().map(|s| s.collision_pct).sum::<f64>() / scenes.len() as f64
        };
        Self {
            ade: w(|s| s.ade),
            fde: w(|s| s.fde),
            collision_pct,
            k,
            scenes,
        }
    }

}
