//! LSTM-GAN predictor: encoder, social pooling, noise-conditioned decoder and
//! an LSTM discriminator. Forward and backward networks share this structure
//! and differ only in their input/output lengths.

mod batch;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use batch::{sample_noise, scene_points, slice_rows, BatchLayout, Episode, PairedBatch};

use crate::data::{MAX_AGENTS, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bound, Linear, LstmCell, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub disc_hidden_dim: usize,
    pub pool_dim: usize,
    pub noise_dim: usize,
    pub context_dim: usize,
    pub max_agents: usize,
    /// When false the social feature is a zero vector (plain LSTM encoder-decoder).
    pub social_pooling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            disc_hidden_dim: 48,
            pool_dim: 32,
            noise_dim: 8,
            context_dim: 4,
            max_agents: MAX_AGENTS,
            social_pooling: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("disc_hidden_dim", self.disc_hidden_dim),
            ("pool_dim", self.pool_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_agents < 2 || self.max_agents > MAX_AGENTS {
            return Err(Error::Config(format!("max_agents must be in 2..={MAX_AGENTS}")));
        }
        Ok(())
    }
}

/// Observed and predicted sequence lengths of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub in_len: usize,
    pub out_len: usize,
}

impl Direction {
    pub const FORWARD: Direction = Direction {
        in_len: OBS_LEN,
        out_len: PRED_LEN,
    };
    pub const BACKWARD: Direction = Direction {
        in_len: PRED_LEN,
        out_len: OBS_LEN,
    };

    pub fn reversed(self) -> Self {
        Direction {
            in_len: self.out_len,
            out_len: self.in_len,
        }
    }
}

/// Gather plans for pooling every agent of a batch over its scene's neighbors.
///
/// Each target gets the same number of slots: its real neighbors followed by
/// zero-input padding slots standing in for absent agents, up to
/// `max_agents - 1` slots in total.
#[derive(Clone, Debug)]
struct PoolPlan {
    slots: usize,
    neighbor: Vec<Option<usize>>,
    target: Vec<Option<usize>>,
}

impl PoolPlan {
    fn new(groups: &[Range<usize>], rows: usize, max_agents: usize) -> Self {
        let widest = groups.iter().map(|g| g.len()).max().unwrap_or(1);
        let capacity = max_agents - 1;
        let slots = if widest > capacity { widest - 1 } else { widest.min(capacity) };
        let slots = slots.max(1);
        let mut neighbor = Vec::with_capacity(rows * slots);
        let mut target = Vec::with_capacity(rows * slots);
        for g in groups {
            for r in g.clone() {
                let mut k = 0;
                for j in g.clone().filter(|&j| j != r) {
                    neighbor.push(Some(j));
                    target.push(Some(r));
                    k += 1;
                }
                for _ in k..slots {
                    neighbor.push(None);
                    target.push(None);
                }
            }
        }
        Self { slots, neighbor, target }
    }
}

/// Embed-then-max aggregation of neighbors' relative positions and hidden states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SocialPooling {
    pub mlp: Linear,
    pub max_agents: usize,
}

impl SocialPooling {
    /// Pools for every row of the batch. `hidden` is `[rows, H]`, `positions`
    /// is `[rows, 2]`; returns `[rows, pool_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, hidden: Var, positions: Var, layout: &BatchLayout) -> Result<Var> {
        if layout.groups().iter().any(|gr| gr.len() > self.max_agents) {
            return Err(Error::Shape(format!("scene exceeds {} agents", self.max_agents)));
        }
        let plan = PoolPlan::new(layout.groups(), layout.rows(), self.max_agents);
        let nb_pos = g.gather_rows(positions, plan.neighbor.clone())?;
        let own_pos = g.gather_rows(positions, plan.target)?;
        let rel = g.sub(nb_pos, own_pos)?;
        let nb_hidden = g.gather_rows(hidden, plan.neighbor)?;
        let pair = g.concat_cols(&[rel, nb_hidden])?;
        let emb = self.mlp.forward(g, p, pair)?;
        let emb = g.relu(emb);
        let cube = g.reshape(emb, vec![layout.rows(), plan.slots, self.mlp.out_dim])?;
        Ok(g.max_axis(cube, 1)?)
    }

    /// Pooled feature of a single agent of a single scene.
    pub fn pool_target(&self, g: &mut Graph, p: &Bound, hidden: Var, positions: Var, target: usize) -> Result<Var> {
        let n = g.shape(hidden)[0];
        if target >= n {
            return Err(Error::Shape(format!("target {target} out of range for {n} agents")));
        }
        let layout = BatchLayout::from_counts(&[n]);
        let all = self.forward(g, p, hidden, positions, &layout)?;
        Ok(g.gather_rows(all, vec![Some(target)])?)
    }
}

/// Predicted displacements and the absolute positions they integrate to.
#[derive(Clone, Debug)]
pub struct GenOutput {
    pub deltas: Vec<Var>,
    pub positions: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub direction: Direction,
    pub params: ParamStore,
    embed: Linear,
    encoder: LstmCell,
    pooling: SocialPooling,
    merge: Linear,
    dec_embed: Linear,
    decoder: LstmCell,
    output: Linear,
}

impl Generator {
    pub fn new(config: &ModelConfig, direction: Direction, rng: &mut impl Rng) -> Self {
        let c = config;
        let mut s = ParamStore::new();
        let embed = Linear::new(&mut s, "gen.embed", 2, c.embed_dim, rng);
        let encoder = LstmCell::new(&mut s, "gen.encoder", c.embed_dim, c.hidden_dim, rng);
        let pool_mlp = Linear::new(&mut s, "gen.pool", 2 + c.hidden_dim, c.pool_dim, rng);
        let merge_in = c.hidden_dim + c.pool_dim + c.context_dim + c.noise_dim;
        let merge = Linear::new(&mut s, "gen.merge", merge_in, c.hidden_dim, rng);
        let dec_embed = Linear::new(&mut s, "gen.dec_embed", 2, c.embed_dim, rng);
        let decoder = LstmCell::new(&mut s, "gen.decoder", c.embed_dim, c.hidden_dim, rng);
        let output = Linear::new(&mut s, "gen.output", c.hidden_dim, 2, rng);
        Self {
            config: c.clone(),
            direction,
            params: s,
            embed,
            encoder,
            pooling: SocialPooling {
                mlp: pool_mlp,
                max_agents: c.max_agents,
            },
            merge,
            dec_embed,
            decoder,
            output,
        }
    }

    pub fn pooling(&self) -> &SocialPooling {
        &self.pooling
    }

    pub fn encoder(&self) -> &LstmCell {
        &self.encoder
    }

    /// Runs the network on observed absolute positions (`[rows, 2]` per step).
    ///
    /// The encoder consumes embedded per-step displacements; the decoder
    /// starts from a projection of `[F_h, F_s, context, z]` and emits
    /// `direction.out_len` displacements, integrated from the last observed
    /// position.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        observed: &[Var],
        layout: &BatchLayout,
        context: Var,
        z: Var,
    ) -> Result<GenOutput> {
        let rows = layout.rows();
        let last = *observed.last().ok_or_else(|| Error::Shape("observed sequence is empty".into()))?;
        for &o in observed {
            if g.shape(o) != [rows, 2] {
                return Err(TensorError::ShapeMismatch {
                    op: "generator_forward",
                    lhs: vec![rows, 2],
                    rhs: g.shape(o).to_vec(),
                }
                .into());
            }
        }
        let expect = |g: &Graph, v: Var, cols: usize, what: &str| -> Result<()> {
            if g.shape(v) != [rows, cols] {
                return Err(Error::Shape(format!("{what}: expected [{rows}, {cols}], got {:?}", g.shape(v))));
            }
            Ok(())
        };
        expect(g, context, self.config.context_dim, "context")?;
        expect(g, z, self.config.noise_dim, "noise")?;

        let mut state = self.encoder.zero_state(g, rows);
        let mut last_delta = None;
        for w in observed.windows(2) {
            let d = g.sub(w[1], w[0])?;
            let e = self.embed.forward(g, p, d)?;
            state = self.encoder.step(g, p, e, state)?;
            last_delta = Some(d);
        }
        let h_enc = state.0;
        let social = if self.config.social_pooling {
            self.pooling.forward(g, p, h_enc, last, layout)?
        } else {
            g.constant(Tensor::zeros(vec![rows, self.config.pool_dim]))
        };
        let merged = g.concat_cols(&[h_enc, social, context, z])?;
        let h0 = self.merge.forward(g, p, merged)?;
        let h0 = g.tanh(h0);
        let c0 = g.constant(Tensor::zeros(vec![rows, self.config.hidden_dim]));

        let mut prev = match last_delta {
            Some(d) => d,
            None => g.constant(Tensor::zeros(vec![rows, 2])),
        };
        let mut state = (h0, c0);
        let mut pos = last;
        let mut out = GenOutput {
            deltas: Vec::with_capacity(self.direction.out_len),
            positions: Vec::with_capacity(self.direction.out_len),
        };
        for _ in 0..self.direction.out_len {
            let e = self.dec_embed.forward(g, p, prev)?;
            state = self.decoder.step(g, p, e, state)?;
            let d = self.output.forward(g, p, state.0)?;
            pos = g.add(pos, d)?;
            out.deltas.push(d);
            out.positions.push(pos);
            prev = d;
        }
        if out.positions.iter().any(|&v| !g.value(v).is_finite()) {
            return Err(Error::Numeric("generator produced a non-finite prediction".into()));
        }
        Ok(out)
    }

    /// Convenience inference on a batch with given noise; returns absolute
    /// positions as time-major `[rows, 2]` tensors.
    pub fn predict(&self, batch: &PairedBatch, z: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let obs = batch.bind_input(&mut g);
        let ctx = g.constant(batch.context.clone());
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &p, &obs, &batch.layout, ctx, zv)?;
        Ok(out.positions.iter().map(|&v| g.value(v).clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: ModelConfig,
    /// Number of positions in a scored trajectory.
    pub seq_len: usize,
    pub params: ParamStore,
    embed: Linear,
    encoder: LstmCell,
    head: Linear,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, seq_len: usize, rng: &mut impl Rng) -> Self {
        let mut s = ParamStore::new();
        let embed = Linear::new(&mut s, "disc.embed", 2, config.embed_dim, rng);
        let encoder = LstmCell::new(&mut s, "disc.encoder", config.embed_dim, config.disc_hidden_dim, rng);
        let head = Linear::new(&mut s, "disc.head", config.disc_hidden_dim, 1, rng);
        Self {
            config: config.clone(),
            seq_len,
            params: s,
            embed,
            encoder,
            head,
        }
    }

    /// Probability that each row's full trajectory is real, as `[rows, 1]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, trajectory: &[Var]) -> Result<Var> {
        if trajectory.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "discriminator expects {} positions, got {}",
                self.seq_len,
                trajectory.len()
            )));
        }
        let rows = g.shape(trajectory[0])[0];
        let mut state = self.encoder.zero_state(g, rows);
        for w in trajectory.windows(2) {
            let d = g.sub(w[1], w[0])?;
            let e = self.embed.forward(g, p, d)?;
            state = self.encoder.step(g, p, e, state)?;
        }
        let logit = self.head.forward(g, p, state.0)?;
        Ok(g.sigmoid(logit))
    }
}

/// Generator plus its discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Predictor {
    pub fn new(config: &ModelConfig, direction: Direction, rng: &mut impl Rng) -> Self {
        let generator = Generator::new(config, direction, rng);
        let discriminator = Discriminator::new(config, direction.in_len + direction.out_len, rng);
        Self {
            generator,
            discriminator,
        }
    }

    pub fn direction(&self) -> Direction {
        self.generator.direction
    }

    pub fn config(&self) -> &ModelConfig {
        &self.generator.config
    }
}
