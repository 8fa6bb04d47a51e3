use serde::{Deserialize, Serialize};

use super::{DataError, SceneSample};
use crate::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMode {
    Absolute,
    /// Per-step displacements plus each agent's first position.
    RelativeDisplacement,
}

/// A sample in a chosen coordinate encoding. Each agent's observed and future
/// points are encoded as one continuous sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSample {
    pub mode: NormalizationMode,
    pub obs_len: usize,
    pub agent_ids: Vec<u64>,
    pub origins: Vec<Point>,
    pub values: Vec<Vec<Point>>,
    pub context: Option<Vec<f64>>,
}

pub fn normalize(sample: &SceneSample, mode: NormalizationMode) -> NormalizedSample {
    let full: Vec<Vec<Point>> = sample
        .observed
        .iter()
        .zip(&sample.future)
        .map(|(o, f)| o.iter().chain(f).copied().collect())
        .collect();
    let (origins, values) = match mode {
        NormalizationMode::Absolute => (vec![[0.0, 0.0]; full.len()], full),
        NormalizationMode::RelativeDisplacement => full
            .iter()
            .map(|pts| {
                let deltas = pts.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
                (pts[0], deltas)
            })
            .unzip(),
    };
    NormalizedSample {
        mode,
        obs_len: sample.obs_len(),
        agent_ids: sample.agent_ids.clone(),
        origins,
        values,
        context: sample.context.clone(),
    }
}

pub fn denormalize(n: &NormalizedSample) -> Result<SceneSample, DataError> {
    let full: Vec<Vec<Point>> = match n.mode {
        NormalizationMode::Absolute => n.values.clone(),
        NormalizationMode::RelativeDisplacement => n
            .origins
            .iter()
            .zip(&n.values)
            .map(|(&o, deltas)| {
                let mut pts = Vec::with_capacity(deltas.len() + 1);
                let mut cur = o;
                pts.push(cur);
                for d in deltas {
                    cur = [cur[0] + d[0], cur[1] + d[1]];
                    pts.push(cur);
                }
                pts
            })
            .collect(),
    };
    if full.iter().any(|p| p.len() <= n.obs_len) {
        return Err(DataError::InvalidSample("normalized sample shorter than observed length".into()));
    }
    let (observed, future) = full
        .into_iter()
        .map(|mut p| {
            let fut = p.split_off(n.obs_len);
            (p, fut)
        })
        .unzip();
    Ok(SceneSample {
        agent_ids: n.agent_ids.clone(),
        observed,
        future,
        context: n.context.clone(),
    })
}
