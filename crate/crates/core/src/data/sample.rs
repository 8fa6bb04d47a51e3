use serde::{Deserialize, Serialize};

use super::{DataError, MAX_AGENTS};
use crate::Point;

/// One agent's positions at a fixed timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: u64,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.points.is_empty() {
            return Err(DataError::InvalidSample(format!("agent {} has no points", self.agent_id)));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidSample(format!("agent {} has non-finite points", self.agent_id)));
        }
        Ok(())
    }
}

/// A scene window split into observed and future segments.
///
/// Agent-major: `observed[i]` and `future[i]` belong to `agent_ids[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub agent_ids: Vec<u64>,
    pub observed: Vec<Vec<Point>>,
    pub future: Vec<Vec<Point>>,
    /// Optional fixed-length scene feature vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<f64>>,
}

/// A scene window in reversed time: the reversed future is observed and the
/// reversed past is the prediction target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardSample {
    pub agent_ids: Vec<u64>,
    pub observed: Vec<Vec<Point>>,
    pub target: Vec<Vec<Point>>,
    pub context: Option<Vec<f64>>,
}

impl SceneSample {
    pub fn agent_count(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn obs_len(&self) -> usize {
        self.observed.first().map_or(0, Vec::len)
    }

    pub fn pred_len(&self) -> usize {
        self.future.first().map_or(0, Vec::len)
    }

    /// Checks agent counts, uniform segment lengths and finiteness.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.agent_ids.len();
        if n == 0 || n > MAX_AGENTS {
            return Err(DataError::InvalidSample(format!("agent count {n} outside 1..={MAX_AGENTS}")));
        }
        if self.observed.len() != n || self.future.len() != n {
            return Err(DataError::InvalidSample("segment count differs from agent count".into()));
        }
        let (to, tp) = (self.obs_len(), self.pred_len());
        if to == 0 || tp == 0 {
            return Err(DataError::InvalidSample("empty segment".into()));
        }
        for (o, f) in self.observed.iter().zip(&self.future) {
            if o.len() != to || f.len() != tp {
                return Err(DataError::InvalidSample("agents have unequal segment lengths".into()));
            }
            if o.iter().chain(f).flatten().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidSample("non-finite coordinate".into()));
            }
        }
        Ok(())
    }

    /// Full per-agent trajectories (observed followed by future).
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.agent_ids
            .iter()
            .zip(self.observed.iter().zip(&self.future))
            .map(|(&agent_id, (o, f))| Trajectory {
                agent_id,
                points: o.iter().chain(f).copied().collect(),
            })
            .collect()
    }
}

impl BackwardSample {
    /// Inverse of [`time_reverse`].
    pub fn time_reverse(&self) -> SceneSample {
        SceneSample {
            agent_ids: self.agent_ids.clone(),
            observed: reversed(&self.target),
            future: reversed(&self.observed),
            context: self.context.clone(),
        }
    }
}

fn reversed(segments: &[Vec<Point>]) -> Vec<Vec<Point>> {
    segments.iter().map(|s| s.iter().rev().copied().collect()).collect()
}

/// Maps a sample to its backward-in-time counterpart.
pub fn time_reverse(sample: &SceneSample) -> BackwardSample {
    BackwardSample {
        agent_ids: sample.agent_ids.clone(),
        observed: reversed(&sample.future),
        target: reversed(&sample.observed),
        context: sample.context.clone(),
    }
}
