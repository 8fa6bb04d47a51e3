//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reciprocal::{Graph, Tensor, Var};

pub type Point = [f64; 2];

pub const FD_STEP: f64 = 1e-5;

/// Norm-wise relative error `||a - n|| / max(||a||, ||n||, floor)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Random cotangent that turns any output into a scalar: `sum(w * y)`.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

/// Worst norm-wise relative error between reverse-mode gradients and central
/// differences of `sum(w * f(inputs))`, over all inputs.
pub fn check_op<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars);
        let l = project(&mut g, y, seed);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let y = f(&mut g, &vars);
    let l = project(&mut g, y, seed);
    g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
        let numeric = numeric_grad(t.numel(), |j, h| {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] += h;
            eval(&vals)
        });
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Central differences of `f(j, h)` (the objective with coordinate `j` shifted by `h`).
pub fn numeric_grad(n: usize, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    (0..n).map(|j| (f(j, FD_STEP) - f(j, -FD_STEP)) / (2.0 * FD_STEP)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values at least `gap` away from zero (keeps finite differences off kinks).
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

// ---- brute-force metric oracles ----

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])).sqrt()
}

/// Time-outer loop, so the summation order differs from the library.
pub fn brute_ade(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> f64 {
    let steps = gt[0].len();
    let mut total = 0.0;
    for t in 0..steps {
        for a in 0..gt.len() {
            total += dist(pred[a][t], gt[a][t]);
        }
    }
    total / (steps * gt.len()) as f64
}

pub fn brute_fde(pred: &[Vec<Point>], gt: &[Vec<Point>]) -> f64 {
    let last = gt[0].len() - 1;
    (0..gt.len()).map(|a| dist(pred[a][last], gt[a][last])).sum::<f64>() / gt.len() as f64
}

/// Agents in a near-collision, checking every ordered pair.
pub fn brute_frame_collision(frame: &[Point], threshold: f64) -> f64 {
    let n = frame.len();
    let mut count = 0;
    for i in 0..n {
        if (0..n).any(|j| j != i && dist(frame[i], frame[j]) < threshold) {
            count += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * count as f64 / n as f64
    }
}

/// Agent-major trajectories; frames are read column-wise.
pub fn brute_collision(trajectories: &[Vec<Point>], threshold: f64) -> f64 {
    let steps = trajectories[0].len();
    let mut sum = 0.0;
    for t in 0..steps {
        let frame: Vec<Point> = trajectories.iter().map(|a| a[t]).collect();
        sum += brute_frame_collision(&frame, threshold);
    }
    sum / steps as f64
}

/// (index, ade, fde) of the first sample with minimal ADE.
pub fn brute_best_of_k(samples: &[Vec<Vec<Point>>], gt: &[Vec<Point>]) -> (usize, f64, f64) {
    let ades: Vec<f64> = samples.iter().map(|s| brute_ade(s, gt)).collect();
    let mut best = 0;
    for k in 1..ades.len() {
        if ades[k] < ades[best] {
            best = k;
        }
    }
    (best, ades[best], brute_fde(&samples[best], gt))
}

pub fn random_tracks(rng: &mut ChaCha8Rng, agents: usize, steps: usize, spread: f64) -> Vec<Vec<Point>> {
    (0..agents)
        .map(|_| (0..steps).map(|_| [rng.random_range(-spread..spread), rng.random_range(-spread..spread)]).collect())
        .collect()
}

// ---- gradient cases ----

use reciprocal::attack::{BackwardMatch, MatchingObjective};
use reciprocal::data::SceneSample;
use reciprocal::losses::{self, LossConfig, NetRef};
use reciprocal::model::{sample_noise, Direction, Discriminator, Generator, ModelConfig, PairedBatch};
use reciprocal::nn::ParamStore;

/// Values whose sorted gaps are at least ~0.08, so max reductions are stable under FD.
fn separated(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let data = ranks.iter().map(|&r| r as f64 * 0.1 - 1.0 + rng.random_range(-0.01..0.01)).collect();
    Tensor::new(shape, data).unwrap()
}

type Case = (&'static str, fn(&mut ChaCha8Rng, u64) -> f64);

/// One randomized instance per call of every differentiable primitive.
pub fn primitive_cases() -> Vec<Case> {
    vec![
        ("add", |r, s| {
            let i = [random_tensor(r, vec![3, 4], -2.0, 2.0), random_tensor(r, vec![3, 4], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.add(v[0], v[1]).unwrap())
        }),
        ("add_broadcast", |r, s| {
            let i = [random_tensor(r, vec![3, 4], -2.0, 2.0), random_tensor(r, vec![4], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.add(v[0], v[1]).unwrap())
        }),
        ("sub", |r, s| {
            let i = [random_tensor(r, vec![2, 5], -2.0, 2.0), random_tensor(r, vec![5], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.sub(v[0], v[1]).unwrap())
        }),
        ("mul", |r, s| {
            let i = [random_tensor(r, vec![3, 4], -2.0, 2.0), random_tensor(r, vec![3, 4], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.mul(v[0], v[1]).unwrap())
        }),
        ("tanh", |r, s| check_op(&[random_tensor(r, vec![3, 4], -3.0, 3.0)], s, |g, v| g.tanh(v[0]))),
        ("sigmoid", |r, s| check_op(&[random_tensor(r, vec![3, 4], -4.0, 4.0)], s, |g, v| g.sigmoid(v[0]))),
        ("exp", |r, s| check_op(&[random_tensor(r, vec![3, 4], -2.0, 2.0)], s, |g, v| g.exp(v[0]))),
        ("log", |r, s| check_op(&[random_tensor(r, vec![3, 4], 0.2, 3.0)], s, |g, v| g.log(v[0]).unwrap())),
        ("relu", |r, s| check_op(&[away_from_zero(r, vec![3, 4], 1e-3)], s, |g, v| g.relu(v[0]))),
        ("neg", |r, s| check_op(&[random_tensor(r, vec![4], -2.0, 2.0)], s, |g, v| g.neg(v[0]))),
        ("scale", |r, s| check_op(&[random_tensor(r, vec![2, 3], -2.0, 2.0)], s, |g, v| g.scale(v[0], -1.7))),
        ("add_scalar", |r, s| check_op(&[random_tensor(r, vec![2, 3], -2.0, 2.0)], s, |g, v| g.add_scalar(v[0], 0.3))),
        ("clamp_min", |r, s| check_op(&[away_from_zero(r, vec![3, 4], 1e-3)], s, |g, v| g.clamp_min(v[0], 0.0))),
        ("matmul", |r, s| {
            let i = [random_tensor(r, vec![3, 4], -2.0, 2.0), random_tensor(r, vec![4, 2], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.matmul(v[0], v[1]).unwrap())
        }),
        ("sum", |r, s| check_op(&[random_tensor(r, vec![3, 4], -2.0, 2.0)], s, |g, v| g.sum(v[0]))),
        ("mean", |r, s| check_op(&[random_tensor(r, vec![3, 4], -2.0, 2.0)], s, |g, v| g.mean(v[0]))),
        ("sum_axis", |r, s| {
            check_op(&[random_tensor(r, vec![3, 4, 2], -2.0, 2.0)], s, |g, v| g.sum_axis(v[0], 1).unwrap())
        }),
        ("max_axis", |r, s| check_op(&[separated(r, vec![3, 4, 2])], s, |g, v| g.max_axis(v[0], 1).unwrap())),
        ("reshape", |r, s| {
            check_op(&[random_tensor(r, vec![3, 4], -2.0, 2.0)], s, |g, v| g.reshape(v[0], vec![2, 6]).unwrap())
        }),
        ("concat_cols", |r, s| {
            let i = [random_tensor(r, vec![3, 2], -2.0, 2.0), random_tensor(r, vec![3, 3], -2.0, 2.0)];
            check_op(&i, s, |g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap())
        }),
        ("slice_cols", |r, s| {
            check_op(&[random_tensor(r, vec![3, 5], -2.0, 2.0)], s, |g, v| g.slice_cols(v[0], 1, 4).unwrap())
        }),
        ("gather_rows", |r, s| {
            check_op(&[random_tensor(r, vec![3, 2], -2.0, 2.0)], s, |g, v| {
                g.gather_rows(v[0], vec![Some(2), None, Some(0), Some(2)]).unwrap()
            })
        }),
        ("l2_norm", |r, s| check_op(&[random_tensor(r, vec![3, 4], -2.0, 2.0)], s, |g, v| g.l2_norm(v[0]))),
        ("segment_l2_norm", |r, s| {
            check_op(&[random_tensor(r, vec![5, 3], -2.0, 2.0)], s, |g, v| {
                g.segment_l2_norm(v[0], vec![0..2, 2..5]).unwrap()
            })
        }),
    ]
}

/// Worst error of a primitive over `instances` random draws.
pub fn primitive_worst(case: &Case, instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances).map(|i| (case.1)(&mut rng, seed.wrapping_add(i as u64))).fold(0.0, f64::max)
}

/// Tiny pair: hidden 4, two agents, three observed and three predicted steps.
pub struct Tiny {
    pub f: Generator,
    pub b: Generator,
    pub d: Discriminator,
    pub scene: SceneSample,
    pub zf: Tensor,
    pub zb: Tensor,
}

pub fn tiny(seed: u64) -> Tiny {
    let cfg = ModelConfig {
        embed_dim: 3,
        hidden_dim: 4,
        disc_hidden_dim: 3,
        pool_dim: 3,
        noise_dim: 2,
        context_dim: 2,
        ..Default::default()
    };
    let dir = Direction { in_len: 3, out_len: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let track = |rng: &mut ChaCha8Rng, a: usize| -> Vec<Point> {
        let (vx, vy) = (rng.random_range(0.2..0.6), rng.random_range(-0.3..0.3));
        (0..6).map(|t| [a as f64 + vx * t as f64 + rng.random_range(-0.05..0.05), vy * t as f64]).collect()
    };
    let tracks: Vec<Vec<Point>> = (0..2).map(|a| track(&mut rng, a)).collect();
    Tiny {
        f: Generator::new(&cfg, dir, &mut rng),
        b: Generator::new(&cfg, dir, &mut rng),
        d: Discriminator::new(&cfg, 6, &mut rng),
        scene: SceneSample {
            agent_ids: vec![0, 1],
            observed: tracks.iter().map(|t| t[..3].to_vec()).collect(),
            future: tracks.iter().map(|t| t[3..].to_vec()).collect(),
            context: Some(vec![0.3, -0.2]),
        },
        zf: sample_noise(&mut rng, 2, 2),
        zb: sample_noise(&mut rng, 2, 2),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Objective {
    JPlus,
    JMinus,
    /// Adversarial generator loss plus J+.
    LTheta,
}

/// Objective value and (forward, backward) parameter gradients.
pub fn objective(t: &Tiny, f: &Generator, b: &Generator, which: Objective) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let fp = f.params.bind(&mut g, true);
    let bp = b.params.bind(&mut g, true);
    let batch = PairedBatch::new(&[&t.scene], 2).unwrap();
    let obs = batch.bind_input(&mut g);
    let fut = batch.bind_target(&mut g);
    let ctx = g.constant(batch.context.clone());
    let zf = g.constant(t.zf.clone());
    let zb = g.constant(t.zb.clone());
    let fr = NetRef { generator: f, params: &fp, noise: zf };
    let br = NetRef { generator: b, params: &bp, noise: zb };
    let cfg = LossConfig::default();
    let out = match which {
        Objective::JPlus => losses::j_forward(&mut g, &obs, &fut, fr, br, ctx, &batch.layout, &cfg, 1.0).unwrap().objective,
        Objective::JMinus => losses::j_backward(&mut g, &obs, &fut, fr, br, ctx, &batch.layout, &cfg, 1.0).unwrap().objective,
        Objective::LTheta => {
            let terms = losses::j_forward(&mut g, &obs, &fut, fr, br, ctx, &batch.layout, &cfg, 1.0).unwrap();
            let dp = t.d.params.bind(&mut g, false);
            let traj: Vec<Var> = obs.iter().chain(&terms.prediction.positions).copied().collect();
            let score = t.d.forward(&mut g, &dp, &traj).unwrap();
            let real = g.constant(Tensor::new(vec![2, 1], vec![0.7, 0.6]).unwrap());
            let (_, adv) = losses::gan_losses(&mut g, real, score, 0.5).unwrap();
            losses::total_loss(&mut g, Some(adv), terms.objective, 1.0).unwrap()
        }
    };
    g.backward(out).unwrap();
    (g.value(out).item().unwrap(), f.params.grads(&g, &fp), b.params.grads(&g, &bp))
}

fn perturbed(gen: &Generator, i: usize, j: usize, h: f64) -> Generator {
    let mut c = gen.clone();
    c.params.tensors_mut()[i].data_mut()[j] += h;
    c
}

fn flat_numeric(store: &ParamStore, f: impl Fn(usize, usize, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, t) in store.tensors().iter().enumerate() {
        out.extend(numeric_grad(t.numel(), |j, h| f(i, j, h)));
    }
    out
}

/// Relative errors of the forward- and backward-parameter gradients of `which`.
pub fn composite_errors(t: &Tiny, which: Objective) -> (f64, f64) {
    let (_, gf, gb) = objective(t, &t.f, &t.b, which);
    let nf = flat_numeric(&t.f.params, |i, j, h| objective(t, &perturbed(&t.f, i, j, h), &t.b, which).0);
    let nb = flat_numeric(&t.b.params, |i, j, h| objective(t, &t.f, &perturbed(&t.b, i, j, h), which).0);
    (rel_error(&gf.concat(), &nf), rel_error(&gb.concat(), &nb))
}

/// Relative error of the matching-error gradient w.r.t. the attacked prediction.
pub fn matching_error_gradient(t: &Tiny) -> f64 {
    let m = BackwardMatch::new(&t.b, &t.scene.observed, t.scene.context.as_deref(), t.zb.clone()).unwrap();
    let y0 = m.encode(&t.scene.future);
    let (_, analytic) = m.error_and_grad(&y0).unwrap();
    let numeric = numeric_grad(y0.len(), |j, h| {
        let mut y = y0.clone();
        y[j] += h;
        m.error(&y).unwrap()
    });
    rel_error(&analytic, &numeric)
}
