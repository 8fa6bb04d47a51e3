//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reciprocal::attack::{exp_average, AttackConfig};
use reciprocal::data::{
    denormalize, extract_windows, generate_social_force, normalize, time_reverse, FrameRecord, NormalizationMode, SceneSample,
    SocialForceConfig, WindowConfig,
};
use reciprocal::eval::{attack_evaluate, evaluate, evaluate_linear};
use reciprocal::metrics::{ade, best_of_k, collision_pct, fde, frames_of, COLLISION_THRESHOLD};
use reciprocal::model::ModelConfig;
use reciprocal::par::Execution;
use reciprocal::train::{reciprocal_train_with, reconstruction_error, ReciprocalPair, TrainConfig};
use reciprocal_cli::dataset::split;
use support::*;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, v: &Verdict) {
    println!("criterion {id} [{}] {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gradients() -> Verdict {
    let t0 = Instant::now();
    let mut worst_primitive = (0.0f64, "");
    for case in primitive_cases() {
        let e = primitive_worst(&case, 100, 17);
        if e > worst_primitive.0 || e.is_nan() {
            worst_primitive = (e, case.0);
        }
    }
    let mut worst_composite = 0.0f64;
    for seed in 0..3 {
        let t = tiny(seed);
        for which in [Objective::JPlus, Objective::JMinus, Objective::LTheta] {
            let (ef, eb) = composite_errors(&t, which);
            worst_composite = worst_composite.max(ef).max(eb);
        }
        worst_composite = worst_composite.max(matching_error_gradient(&t));
    }
    let secs = t0.elapsed().as_secs_f64();
    Verdict {
        pass: worst_primitive.0 < 1e-5 && worst_composite < 1e-4 && secs < 30.0,
        detail: format!(
            "{} primitives, worst {:.2e} ({}) < 1e-5; J+/J-/L_theta/E worst {:.2e} < 1e-4; {:.1} s < 30 s",
            primitive_cases().len(),
            worst_primitive.0,
            worst_primitive.1,
            worst_composite,
            secs
        ),
    }
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut index_mismatch = 0;
    for case in 0..1000 {
        let agents = rng.random_range(1..6);
        let steps = rng.random_range(1..13);
        let gt = random_tracks(&mut rng, agents, steps, 3.0);
        let spread = if case % 2 == 0 { 0.15 } else { 3.0 };
        let k = rng.random_range(1..5);
        let samples: Vec<_> = (0..k).map(|_| random_tracks(&mut rng, agents, steps, spread)).collect();
        let p = &samples[0];
        let b = best_of_k(&samples, &gt).unwrap();
        let (bi, ba, bf) = brute_best_of_k(&samples, &gt);
        index_mismatch += usize::from(b.index != bi);
        for d in [
            ade(p, &gt).unwrap() - brute_ade(p, &gt),
            fde(p, &gt).unwrap() - brute_fde(p, &gt),
            collision_pct(&frames_of(p), COLLISION_THRESHOLD) - brute_collision(p, COLLISION_THRESHOLD),
            b.ade - ba,
            b.fde - bf,
        ] {
            worst = worst.max(d.abs());
        }
    }
    let offset = ade(&[vec![[3.0, 4.0], [4.0, 5.0]]], &[vec![[0.0, 0.0], [1.0, 1.0]]]).unwrap();
    let inside = collision_pct(&[vec![[0.0, 0.0], [0.0999, 0.0]]], COLLISION_THRESHOLD);
    let at = collision_pct(&[vec![[0.0, 0.0], [0.1, 0.0]]], COLLISION_THRESHOLD);
    Verdict {
        pass: worst <= 1e-12 && index_mismatch == 0 && offset == 5.0 && inside == 100.0 && at == 0.0,
        detail: format!(
            "1000 cases, worst deviation {worst:.1e} <= 1e-12, {index_mismatch} best-of-K index mismatches; \
             offset ADE {offset}, collision at 0.0999 m {inside}%, at 0.1 m {at}%"
        ),
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> SceneSample {
    let agents = rng.random_range(1..6);
    let obs = rng.random_range(2..9);
    let pred = rng.random_range(1..13);
    let mut track = |n: usize| -> Vec<Vec<[f64; 2]>> {
        (0..agents)
            .map(|_| (0..n).map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]).collect())
            .collect()
    };
    let observed = track(obs);
    let future = track(pred);
    let context = rng.random_bool(0.5).then(|| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
    SceneSample {
        agent_ids: (0..agents as u64).collect(),
        observed,
        future,
        context,
    }
}

fn random_records(rng: &mut ChaCha8Rng) -> Vec<FrameRecord> {
    let frames = rng.random_range(1..40);
    let agents = rng.random_range(1..40u64);
    let presence = rng.random_range(0.5..1.0);
    let mut out = Vec::new();
    for f in 0..frames {
        for a in 0..agents {
            if rng.random_bool(presence) {
                out.push(FrameRecord {
                    frame: 10 * f as i64,
                    agent: a,
                    pos: [f as f64 + 1000.0 * a as f64, a as f64],
                });
            }
        }
    }
    out
}

fn data_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut involution, mut round_trip, mut windows) = (0, 0, 0);
    let mut worst_displacement = 0.0f64;
    const CASES: usize = 1000;
    for _ in 0..CASES {
        let s = random_scene(&mut rng);
        involution += usize::from(time_reverse(&s).time_reverse() != s);

        let abs = denormalize(&normalize(&s, NormalizationMode::Absolute)).unwrap();
        round_trip += usize::from(abs != s);
        let rel = denormalize(&normalize(&s, NormalizationMode::RelativeDisplacement)).unwrap();
        for (a, b) in rel.observed.iter().chain(&rel.future).flatten().zip(s.observed.iter().chain(&s.future).flatten()) {
            worst_displacement = worst_displacement.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }

        let recs = random_records(&mut rng);
        let cfg = WindowConfig {
            obs_len: rng.random_range(1..5),
            pred_len: rng.random_range(1..5),
            stride: rng.random_range(1..3),
        };
        let present: std::collections::HashSet<(i64, u64)> = recs.iter().map(|r| (r.frame, r.agent)).collect();
        let frames: Vec<i64> = recs.iter().map(|r| r.frame).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for w in extract_windows(&recs, cfg) {
            // Points encode their frame index in x, so each track must sit on
            // consecutive recorded frames of its own agent.
            let complete = w.agent_ids.iter().enumerate().all(|(i, &id)| {
                let frame_of = |p: &[f64; 2]| 10 * (p[0] - 1000.0 * id as f64).round() as i64;
                let pts: Vec<&[f64; 2]> = w.observed[i].iter().chain(&w.future[i]).collect();
                let Some(start) = frames.iter().position(|&f| f == frame_of(pts[0])) else {
                    return false;
                };
                pts.len() == cfg.obs_len + cfg.pred_len
                    && pts
                        .iter()
                        .enumerate()
                        .all(|(t, p)| frames.get(start + t) == Some(&frame_of(p)) && present.contains(&(frame_of(p), id)))
            });
            windows += usize::from(!complete || w.validate().is_err());
        }
    }
    Verdict {
        pass: involution == 0 && round_trip == 0 && windows == 0 && worst_displacement <= 1e-12,
        detail: format!(
            "{CASES} samples each: {involution} involution, {round_trip} absolute round-trip, {windows} window-completeness failures; \
             displacement round-trip error {worst_displacement:.1e} <= 1e-12"
        ),
    }
}

/// Everything criteria 4-6 need from one seed.
struct SeedRun {
    seed: u64,
    linear_ade: f64,
    reciprocal_ade: f64,
    baseline_ade: f64,
    reciprocal_reconstruction: f64,
    baseline_reconstruction: f64,
    improved_fraction: f64,
    pre_attack_ade: f64,
    post_attack_ade: f64,
    longest_training: Duration,
}

fn train_pair(lambda: f64, seed: u64, train: &[SceneSample]) -> (ReciprocalPair, Duration) {
    let cfg = TrainConfig {
        lambda,
        seed,
        ..Default::default()
    };
    let mut pair = ReciprocalPair::new(&ModelConfig::default(), &cfg).unwrap();
    let t0 = Instant::now();
    reciprocal_train_with(&mut pair, train, Execution::default(), None).unwrap();
    (pair, t0.elapsed())
}

fn seed_run(seed: u64) -> SeedRun {
    let exec = Execution::default();
    let scenes = generate_social_force(&SocialForceConfig {
        n_scenes: 500,
        agents_per_scene: 4,
        seed,
        ..Default::default()
    })
    .unwrap();
    let (train, test) = split(scenes, 0.2).unwrap();
    let (recip, t_recip) = train_pair(0.5, seed, &train);
    let (base, t_base) = train_pair(1.0, seed, &train);
    let best_of_20 = |p: &ReciprocalPair| evaluate(&p.forward.model.generator, &test, 20, seed, exec).unwrap().report.ade;
    let attack = attack_evaluate(
        &recip.forward.model.generator,
        &recip.backward.model.generator,
        &test,
        &AttackConfig::default(),
        seed,
        exec,
    )
    .unwrap();
    let run = SeedRun {
        seed,
        linear_ade: evaluate_linear(&test).unwrap().report.ade,
        reciprocal_ade: best_of_20(&recip),
        baseline_ade: best_of_20(&base),
        reciprocal_reconstruction: reconstruction_error(&recip, &test, exec).unwrap(),
        baseline_reconstruction: reconstruction_error(&base, &test, exec).unwrap(),
        improved_fraction: attack.improved_fraction(),
        pre_attack_ade: attack.pre.report.ade,
        post_attack_ade: attack.post.report.ade,
        longest_training: t_recip.max(t_base),
    };
    println!(
        "  seed {}: linear {:.4} | best-of-20 reciprocal {:.4} baseline {:.4} | reconstruction {:.4} vs {:.4} | \
         attack E^M<=E^0 {:.1}%, ADE {:.4} -> {:.4} | training {:.0} s / {:.0} s",
        run.seed,
        run.linear_ade,
        run.reciprocal_ade,
        run.baseline_ade,
        run.reciprocal_reconstruction,
        run.baseline_reconstruction,
        100.0 * run.improved_fraction,
        run.pre_attack_ade,
        run.post_attack_ade,
        t_recip.as_secs_f64(),
        t_base.as_secs_f64(),
    );
    run
}

fn baseline_ordering(runs: &[SeedRun]) -> Verdict {
    let model = median(runs.iter().map(|r| r.reciprocal_ade).collect());
    let linear = median(runs.iter().map(|r| r.linear_ade).collect());
    let longest = runs.iter().map(|r| r.longest_training).max().unwrap_or_default();
    Verdict {
        pass: model <= linear && longest < Duration::from_secs(600),
        detail: format!(
            "median best-of-20 ADE {model:.4} <= linear {linear:.4}; 50-epoch training max {:.0} s < 600 s",
            longest.as_secs_f64()
        ),
    }
}

fn reciprocal_ablation(runs: &[SeedRun]) -> Verdict {
    let ratio = median(runs.iter().map(|r| r.reciprocal_ade / r.baseline_ade).collect());
    let recip = median(runs.iter().map(|r| r.reciprocal_reconstruction).collect());
    let base = median(runs.iter().map(|r| r.baseline_reconstruction).collect());
    Verdict {
        pass: ratio <= 1.02 && recip < base,
        detail: format!(
            "median ADE ratio reciprocal/baseline {ratio:.4} <= 1.02; median reconstruction {recip:.4} < {base:.4}"
        ),
    }
}

fn attack_behavior(runs: &[SeedRun]) -> Verdict {
    let improved = median(runs.iter().map(|r| r.improved_fraction).collect());
    let ratio = median(runs.iter().map(|r| r.post_attack_ade / r.pre_attack_ade).collect());
    let avg = exp_average(&[vec![1.0], vec![2.0], vec![3.0]], 0.1).unwrap()[0];
    Verdict {
        pass: improved >= 0.8 && ratio <= 1.05 && (avg - 2.0665).abs() <= 1e-4,
        detail: format!(
            "median E^M<=E^0 fraction {:.1}% >= 80%; median post/pre ADE {ratio:.4} <= 1.05; exp-average {avg:.5} (2.0665 +- 1e-4)",
            100.0 * improved
        ),
    }
}

fn recip(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_recip"))
        .args(args)
        .env(reciprocal_cli::OUTPUT_ROOT_ENV, root)
        .current_dir(root)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("recip {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    recip(root, &["generate", "--scenes", "40", "--agents", "3", "--seed", "7", "--out", "data"])?;
    recip(
        root,
        &["train", "--data", "data", "--epochs", "3", "--pretrain-epochs", "1", "--batch-size", "16", "--seed", "7", "--out", "train"],
    )?;
    recip(
        root,
        &["eval", "--checkpoint", "train/model.ckpt", "--data", "data", "--k", "5", "--linear", "--seed", "7", "--out", "eval"],
    )?;
    recip(root, &["attack-eval", "--checkpoint", "train/model.ckpt", "--data", "data", "--seed", "7", "--out", "attack"])?;
    let mut csvs = BTreeMap::new();
    for dir in ["train", "eval", "attack"] {
        for entry in std::fs::read_dir(root.join(dir)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let name = path.strip_prefix(root).unwrap().display().to_string();
                csvs.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(csvs)
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            Verdict {
                pass: x.len() >= 6 && differing.is_empty() && x.keys().eq(y.keys()),
                detail: format!(
                    "generate -> train -> eval -> attack-eval twice: {} CSV files, {} differ",
                    x.len(),
                    differing.len()
                ),
            }
        }
        (Err(e), _) | (_, Err(e)) => Verdict {
            pass: false,
            detail: format!("pipeline failed: {e}"),
        },
    }
}

fn non_reproducibility() -> Verdict {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap_or_default();
    let stated = readme.contains("not reproducible") && readme.contains("0.69") && readme.contains("1.24");
    println!(
        "  Absolute ADE/FDE values reported for the full-scale method (e.g. ETH 0.69 / 1.24) and its collision \
         percentages are not reproducible here: they depend on pretrained VGG scene features, depth features and \
         full-scale training, all out of scope. Criteria 4-6 check directional and property-based behavior instead."
    );
    Verdict {
        pass: stated,
        detail: "statement printed above and present in README.md".into(),
    }
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let t0 = Instant::now();
    let mut all = true;
    let mut record = |id: usize, title: &str, v: Verdict| {
        report(id, title, &v);
        all &= v.pass;
    };
    record(1, "gradient correctness", gradients());
    record(2, "metric oracles", metric_oracles());
    record(3, "data invariants", data_invariants());
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| seed_run(s)).collect();
    record(4, "baseline ordering", baseline_ordering(&runs));
    record(5, "reciprocal-learning ablation", reciprocal_ablation(&runs));
    record(6, "attack behavior", attack_behavior(&runs));
    record(7, "determinism", determinism());
    record(8, "non-reproducibility statement", non_reproducibility());
    println!("acceptance finished in {:.0} s", t0.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
