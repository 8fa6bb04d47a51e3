use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{BackwardSample, SceneSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::Point;

/// A training/evaluation pair: what a network observes and what it should
/// predict, agent-major.
pub trait Episode: Sync {
    fn input(&self) -> &[Vec<Point>];
    fn target(&self) -> &[Vec<Point>];
    fn context(&self) -> Option<&[f64]>;

    fn agent_count(&self) -> usize {
        self.input().len()
    }
}

impl Episode for SceneSample {
    fn input(&self) -> &[Vec<Point>] {
        &self.observed
    }
    fn target(&self) -> &[Vec<Point>] {
        &self.future
    }
    fn context(&self) -> Option<&[f64]> {
        self.context.as_deref()
    }
}

impl Episode for BackwardSample {
    fn input(&self) -> &[Vec<Point>] {
        &self.observed
    }
    fn target(&self) -> &[Vec<Point>] {
        &self.target
    }
    fn context(&self) -> Option<&[f64]> {
        self.context.as_deref()
    }
}

/// Row layout of a batch: scene `i` owns rows `groups[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    groups: Vec<Range<usize>>,
    rows: usize,
}

impl BatchLayout {
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut groups = Vec::with_capacity(counts.len());
        let mut start = 0;
        for &c in counts {
            groups.push(start..start + c);
            start += c;
        }
        Self { groups, rows: start }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn scenes(&self) -> usize {
        self.groups.len()
    }

    /// Sub-layout for scenes `range`, re-based to start at row 0.
    pub fn slice(&self, range: Range<usize>) -> Self {
        let counts: Vec<usize> = self.groups[range].iter().map(|g| g.len()).collect();
        Self::from_counts(&counts)
    }
}

/// Time-major tensors for a set of episodes.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pub layout: BatchLayout,
    /// One `[rows, 2]` tensor per observed step.
    pub input: Vec<Tensor>,
    /// One `[rows, 2]` tensor per target step.
    pub target: Vec<Tensor>,
    /// `[rows, context_dim]`, each row holding its scene's context.
    pub context: Tensor,
}

fn time_major(segments: &[&[Vec<Point>]], len: usize) -> Result<Vec<Tensor>> {
    let rows: usize = segments.iter().map(|s| s.len()).sum();
    let mut out = vec![vec![0.0; rows * 2]; len];
    let mut r = 0;
    for scene in segments {
        for agent in scene.iter() {
            if agent.len() != len {
                return Err(Error::Shape(format!("segment length {} != {len}", agent.len())));
            }
            for (t, p) in agent.iter().enumerate() {
                out[t][2 * r] = p[0];
                out[t][2 * r + 1] = p[1];
            }
            r += 1;
        }
    }
    Ok(out
        .into_iter()
        .map(|d| Tensor::new(vec![rows, 2], d).expect("rows x 2"))
        .collect())
}

impl PairedBatch {
    pub fn new<E: Episode>(episodes: &[&E], context_dim: usize) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let in_len = first.input().first().map_or(0, Vec::len);
        let out_len = first.target().first().map_or(0, Vec::len);
        for e in episodes {
            if e.agent_count() == 0 || e.target().len() != e.agent_count() {
                return Err(Error::Shape("episode with no agents or mismatched target".into()));
            }
        }
        let layout = BatchLayout::from_counts(&episodes.iter().map(|e| e.agent_count()).collect::<Vec<_>>());
        let inputs: Vec<&[Vec<Point>]> = episodes.iter().map(|e| e.input()).collect();
        let targets: Vec<&[Vec<Point>]> = episodes.iter().map(|e| e.target()).collect();
        let mut ctx = Vec::with_capacity(layout.rows() * context_dim);
        for e in episodes {
            let row: Vec<f64> = match e.context() {
                Some(c) if c.len() == context_dim => c.to_vec(),
                Some(c) => {
                    return Err(Error::Shape(format!(
                        "context length {} != configured {context_dim}",
                        c.len()
                    )))
                }
                None => vec![0.0; context_dim],
            };
            for _ in 0..e.agent_count() {
                ctx.extend_from_slice(&row);
            }
        }
        Ok(Self {
            input: time_major(&inputs, in_len)?,
            target: time_major(&targets, out_len)?,
            context: Tensor::new(vec![layout.rows(), context_dim], ctx)?,
            layout,
        })
    }

    /// Restriction to scenes `range`.
    pub fn slice(&self, range: Range<usize>) -> Self {
        let rows = self.layout.groups()[range.start].start..self.layout.groups()[range.end - 1].end;
        let cut = |t: &Tensor| {
            let cols = t.shape()[1];
            Tensor::new(
                vec![rows.len(), cols],
                t.data()[rows.start * cols..rows.end * cols].to_vec(),
            )
            .expect("row slice")
        };
        Self {
            layout: self.layout.slice(range),
            input: self.input.iter().map(cut).collect(),
            target: self.target.iter().map(cut).collect(),
            context: cut(&self.context),
        }
    }

    pub fn bind_input(&self, g: &mut Graph) -> Vec<Var> {
        self.input.iter().map(|t| g.constant(t.clone())).collect()
    }

    pub fn bind_target(&self, g: &mut Graph) -> Vec<Var> {
        self.target.iter().map(|t| g.constant(t.clone())).collect()
    }
}

/// Standard-normal noise, one row per agent.
pub fn sample_noise(rng: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, dim], data).expect("rows x dim")
}

/// Rows `rows` of a rank-2 tensor.
pub fn slice_rows(t: &Tensor, rows: Range<usize>) -> Tensor {
    let cols = t.shape()[1];
    Tensor::new(
        vec![rows.len(), cols],
        t.data()[rows.start * cols..rows.end * cols].to_vec(),
    )
    .expect("row slice")
}

/// Agent-major absolute positions of `scene` out of time-major `[rows, 2]` tensors.
pub fn scene_points(steps: &[Tensor], rows: Range<usize>) -> Vec<Vec<Point>> {
    rows.map(|r| steps.iter().map(|t| [t.at2(r, 0), t.at2(r, 1)]).collect())
        .collect()
}
