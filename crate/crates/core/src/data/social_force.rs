//! Synthetic crowd scenes from a social-force model.
//!
//! Each agent relaxes toward its preferred velocity (pointing at its goal)
//! and is pushed away from every other agent by an exponential repulsion
//! `A * exp(-d / B)` along the separating direction. Velocities are capped at
//! `max_speed`. The state is integrated with semi-implicit Euler substeps and
//! recorded every [`DT`](super::DT) seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, SceneSample, DT, MAX_AGENTS, OBS_LEN, PRED_LEN};
use crate::par::Execution;
use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialForceConfig {
    pub n_scenes: usize,
    pub agents_per_scene: usize,
    pub seed: u64,
    /// Diameter of the circle agents start on, in meters.
    pub arena_size: f64,
    pub goal_gain: f64,
    pub repulsion_strength: f64,
    /// Decay length of the repulsion, in meters.
    pub repulsion_range: f64,
    pub max_speed: f64,
    pub min_preferred_speed: f64,
    pub max_preferred_speed: f64,
    pub substeps: usize,
    pub obs_len: usize,
    pub pred_len: usize,
}

impl Default for SocialForceConfig {
    fn default() -> Self {
        Self {
            n_scenes: 500,
            agents_per_scene: 4,
            seed: 0,
            arena_size: 8.0,
            goal_gain: 1.0,
            repulsion_strength: 2.0,
            repulsion_range: 0.5,
            max_speed: 2.0,
            min_preferred_speed: 1.0,
            max_preferred_speed: 1.4,
            substeps: 4,
            obs_len: OBS_LEN,
            pred_len: PRED_LEN,
        }
    }
}

impl SocialForceConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.agents_per_scene == 0 || self.agents_per_scene > MAX_AGENTS {
            return bad(format!("agents_per_scene must be in 1..={MAX_AGENTS}, got {}", self.agents_per_scene));
        }
        if self.obs_len < 2 || self.pred_len == 0 {
            return bad("obs_len must be >= 2 and pred_len >= 1".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        let positive = [
            ("arena_size", self.arena_size),
            ("max_speed", self.max_speed),
            ("repulsion_range", self.repulsion_range),
            ("min_preferred_speed", self.min_preferred_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("goal_gain", self.goal_gain), ("repulsion_strength", self.repulsion_strength)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.max_preferred_speed >= self.min_preferred_speed && self.max_preferred_speed <= self.max_speed) {
            return bad("preferred speed range must satisfy min <= max <= max_speed".into());
        }
        Ok(())
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics {
            goal_gain: self.goal_gain,
            repulsion_strength: self.repulsion_strength,
            repulsion_range: self.repulsion_range,
            max_speed: self.max_speed,
            substeps: self.substeps,
        }
    }
}

/// Force-model parameters used by [`simulate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    pub goal_gain: f64,
    pub repulsion_strength: f64,
    pub repulsion_range: f64,
    pub max_speed: f64,
    pub substeps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub pos: Point,
    pub vel: Point,
    pub goal: Point,
    pub preferred_speed: f64,
}

impl Agent {
    /// Agent already moving at its preferred velocity toward `goal`.
    pub fn heading_to(pos: Point, goal: Point, preferred_speed: f64) -> Self {
        let mut a = Agent {
            pos,
            vel: [0.0, 0.0],
            goal,
            preferred_speed,
        };
        a.vel = a.desired_velocity();
        a
    }

    fn desired_velocity(&self) -> Point {
        let d = [self.goal[0] - self.pos[0], self.goal[1] - self.pos[1]];
        let dist = d[0].hypot(d[1]);
        if dist < 1e-9 {
            return [0.0, 0.0];
        }
        // Slow down inside the last meter.
        let speed = self.preferred_speed * dist.min(1.0);
        [d[0] / dist * speed, d[1] / dist * speed]
    }
}

/// Integrates the agents and returns `frames` recorded positions per agent,
/// starting with the initial positions.
pub fn simulate(agents: &[Agent], dynamics: &Dynamics, frames: usize) -> Vec<Vec<Point>> {
    let mut state = agents.to_vec();
    let mut tracks: Vec<Vec<Point>> = state.iter().map(|a| vec![a.pos]).collect();
    let h = DT / dynamics.substeps as f64;
    for _ in 1..frames {
        for _ in 0..dynamics.substeps {
            let acc: Vec<Point> = (0..state.len())
                .map(|i| {
                    let a = &state[i];
                    let want = a.desired_velocity();
                    let mut f = [
                        dynamics.goal_gain * (want[0] - a.vel[0]),
                        dynamics.goal_gain * (want[1] - a.vel[1]),
                    ];
                    for (j, b) in state.iter().enumerate() {
                        if i == j {
                            continue;
                        }
                        let d = [a.pos[0] - b.pos[0], a.pos[1] - b.pos[1]];
                        let dist = d[0].hypot(d[1]).max(1e-6);
                        let mag = dynamics.repulsion_strength * (-dist / dynamics.repulsion_range).exp();
                        f[0] += mag * d[0] / dist;
                        f[1] += mag * d[1] / dist;
                    }
                    f
                })
                .collect();
            for (a, f) in state.iter_mut().zip(acc) {
                a.vel[0] += h * f[0];
                a.vel[1] += h * f[1];
                let speed = a.vel[0].hypot(a.vel[1]);
                if speed > dynamics.max_speed {
                    let s = dynamics.max_speed / speed;
                    a.vel = [a.vel[0] * s, a.vel[1] * s];
                }
                a.pos[0] += h * a.vel[0];
                a.pos[1] += h * a.vel[1];
            }
        }
        for (t, a) in tracks.iter_mut().zip(&state) {
            t.push(a.pos);
        }
    }
    tracks
}

fn scene_agents(cfg: &SocialForceConfig, rng: &mut ChaCha8Rng) -> Vec<Agent> {
    let radius = cfg.arena_size / 2.0;
    (0..cfg.agents_per_scene)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = radius * rng.random_range(0.6..1.0);
            let start = [r * angle.cos(), r * angle.sin()];
            // Goal past the opposite side so most paths cross near the center.
            let goal_angle = angle + std::f64::consts::PI + rng.random_range(-0.4..0.4);
            let goal = [1.5 * radius * goal_angle.cos(), 1.5 * radius * goal_angle.sin()];
            let speed = rng.random_range(cfg.min_preferred_speed..=cfg.max_preferred_speed);
            Agent::heading_to(start, goal, speed)
        })
        .collect()
}

/// Generates `n_scenes` windows. Scene `i` depends only on `(seed, i)`.
pub fn generate_social_force(cfg: &SocialForceConfig) -> Result<Vec<SceneSample>, DataError> {
    generate_social_force_with(cfg, Execution::default())
}

pub fn generate_social_force_with(cfg: &SocialForceConfig, exec: Execution) -> Result<Vec<SceneSample>, DataError> {
    cfg.validate()?;
    let dynamics = cfg.dynamics();
    let frames = cfg.obs_len + cfg.pred_len;
    Ok(exec.map(cfg.n_scenes, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let agents = scene_agents(cfg, &mut rng);
        let tracks = simulate(&agents, &dynamics, frames);
        SceneSample {
            agent_ids: (0..agents.len() as u64).collect(),
            observed: tracks.iter().map(|t| t[..cfg.obs_len].to_vec()).collect(),
            future: tracks.iter().map(|t| t[cfg.obs_len..].to_vec()).collect(),
            context: None,
        }
    }))
}
