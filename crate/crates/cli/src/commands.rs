use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use reciprocal::attack::AttackConfig;
use reciprocal::checkpoint::{load_checkpoint, save_checkpoint};
use reciprocal::data::{
    extract_windows, generate_social_force_with, load_eth_ucy, SceneSample, SocialForceConfig, WindowConfig, OBS_LEN, PRED_LEN,
};
use reciprocal::eval::{attack_evaluate, evaluate, evaluate_linear};
use reciprocal::model::ModelConfig;
use reciprocal::optim::AdamConfig;
use reciprocal::par::Execution;
use reciprocal::train::{reciprocal_train_with, ReciprocalPair, TrainConfig};

use crate::args::{AttackEvalArgs, EvalArgs, GenerateArgs, IngestArgs, Mode, TrainArgs};
use crate::dataset::{split, write_subset, Dataset, Manifest, MANIFEST};
use crate::invalid;
use crate::output::{self, SummaryRow};

pub const CHECKPOINT: &str = "model.ckpt";

/// Arena diameters of successive synthetic subsets, relative to the first.
/// Smaller arenas give denser, more interactive scenes.
const ARENA_SCALES: [f64; 5] = [1.0, 0.75, 1.25, 0.875, 1.125];

pub fn generate(a: &GenerateArgs, exec: Execution) -> Result<()> {
    if a.subsets == 0 {
        return Err(invalid("--subsets must be >= 1"));
    }
    let nested = a.subsets > 1;
    let mut subsets = Vec::with_capacity(a.subsets);
    for k in 0..a.subsets {
        let cfg = SocialForceConfig {
            n_scenes: a.scenes,
            agents_per_scene: a.agents,
            seed: a.seed.wrapping_add(k as u64),
            arena_size: a.arena_size * ARENA_SCALES[k % ARENA_SCALES.len()],
            ..Default::default()
        };
        let samples = generate_social_force_with(&cfg, exec).map_err(reciprocal::Error::from)?;
        let (train, test) = split(samples, a.test_fraction)?;
        let name = if nested { format!("synthetic-{k}") } else { "synthetic".into() };
        subsets.push(write_subset(&a.out, &name, nested, train, test, serde_json::to_value(&cfg)?)?);
    }
    let manifest = Manifest {
        kind: "social-force".into(),
        seed: Some(a.seed),
        obs_len: OBS_LEN,
        pred_len: PRED_LEN,
        subsets,
    };
    output::write_json(&a.out.join(MANIFEST), &manifest)
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    if a.stride == 0 {
        return Err(invalid("--stride must be >= 1"));
    }
    let nested = a.inputs.len() > 1;
    let mut subsets = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        if !path.is_file() {
            return Err(invalid(format!("no such input file: {}", path.display())));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| invalid(format!("cannot name a subset after {}", path.display())))?;
        if subsets.iter().any(|s: &crate::dataset::SubsetEntry| s.name == name) {
            return Err(invalid(format!("two inputs map to the subset name {name:?}")));
        }
        let records = load_eth_ucy(path)?;
        let windows = extract_windows(
            &records,
            WindowConfig {
                stride: a.stride,
                ..Default::default()
            },
        );
        let (train, test) = split(windows, a.test_fraction).with_context(|| format!("splitting {}", path.display()))?;
        let source = serde_json::json!({ "file": path, "stride": a.stride });
        subsets.push(write_subset(&a.out, &name, nested, train, test, source)?);
    }
    let manifest = Manifest {
        kind: "eth-ucy".into(),
        seed: None,
        obs_len: OBS_LEN,
        pred_len: PRED_LEN,
        subsets,
    };
    output::write_json(&a.out.join(MANIFEST), &manifest)
}

/// Model and training configuration implied by the arguments.
pub fn configs(a: &TrainArgs) -> Result<(ModelConfig, TrainConfig)> {
    let lambda = match (a.mode, a.lambda) {
        (Mode::Reciprocal, l) => l.unwrap_or(0.5),
        (_, None) => 1.0,
        (_, Some(1.0)) => 1.0,
        (m, Some(l)) => return Err(invalid(format!("--lambda {l} conflicts with --mode {m:?}, which trains with lambda = 1"))),
    };
    let model = ModelConfig {
        social_pooling: a.mode != Mode::Lstm,
        ..Default::default()
    };
    let train = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        pretrain_epochs: a.pretrain_epochs.min(a.epochs),
        lambda,
        gan_weight: if a.mode == Mode::Lstm { 0.0 } else { a.gan_weight },
        seed: a.seed,
        alternation: a.alternation.into(),
        adam: AdamConfig {
            lr: a.learning_rate,
            ..Default::default()
        },
        clip_norm: a.clip_norm,
        ..Default::default()
    };
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

fn load_pair(path: &Path) -> Result<ReciprocalPair> {
    if !path.is_file() {
        return Err(invalid(format!("no checkpoint at {}", path.display())));
    }
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn train_one(a: &TrainArgs, samples: &[SceneSample], model: &ModelConfig, train: &TrainConfig, out: &Path, exec: Execution) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut pair = match &a.resume {
        Some(path) => {
            let pair = load_pair(path)?;
            if pair.model_config != *model || pair.train_config != *train {
                return Err(invalid(format!(
                    "{} was trained with a different configuration than requested",
                    path.display()
                )));
            }
            pair
        }
        None => ReciprocalPair::new(model, train)?,
    };
    reciprocal_train_with(&mut pair, samples, exec, a.stop_after)?;
    save_checkpoint(&pair, &out.join(CHECKPOINT))?;
    output::write_losses(&out.join("losses.csv"), &pair.history)?;
    eprintln!("trained {} of {} epochs -> {}", pair.epochs_done, train.epochs, out.join(CHECKPOINT).display());
    Ok(())
}

pub fn train(a: &TrainArgs, exec: Execution) -> Result<()> {
    let (model, cfg) = configs(a)?;
    let ds = Dataset::open(&a.data)?;
    if a.leave_one_out {
        if ds.manifest.subsets.len() < 2 {
            return Err(invalid("--leave-one-out needs a dataset with at least two subsets"));
        }
        for name in ds.names() {
            let samples = ds.train_samples(Some(name))?;
            train_one(a, &samples, &model, &cfg, &a.out.join(name), exec)?;
        }
        Ok(())
    } else {
        let samples = ds.train_samples(a.holdout.as_deref())?;
        train_one(a, &samples, &model, &cfg, &a.out, exec)
    }
}

/// Label of the experiment arm a pair was trained as.
fn arm(pair: &ReciprocalPair) -> &'static str {
    if pair.train_config.lambda < 1.0 {
        "reciprocal"
    } else if !pair.model_config.social_pooling && pair.train_config.gan_weight == 0.0 {
        "lstm"
    } else {
        "baseline"
    }
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    rows: &'a [SummaryRow],
}

pub fn eval(a: &EvalArgs, exec: Execution) -> Result<()> {
    if a.k == 0 {
        return Err(invalid("--k must be >= 1"));
    }
    let ds = Dataset::open(&a.data)?;
    let folds: Vec<(String, std::path::PathBuf, Option<String>)> = if a.leave_one_out {
        if ds.manifest.subsets.len() < 2 {
            return Err(invalid("--leave-one-out needs a dataset with at least two subsets"));
        }
        ds.names()
            .into_iter()
            .map(|n| (n.to_string(), a.checkpoint.join(n).join(CHECKPOINT), Some(n.to_string())))
            .collect()
    } else {
        let label = a.subset.clone().unwrap_or_else(|| "all".into());
        vec![(label, a.checkpoint.clone(), a.subset.clone())]
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (label, ckpt, subset) in &folds {
        let pair = load_pair(ckpt)?;
        let test = ds.test_samples(subset.as_deref())?;
        if test.is_empty() {
            return Err(invalid(format!("subset {label} has no test scenes")));
        }
        let model = evaluate(&pair.forward.model.generator, &test, a.k, a.seed, exec)?;
        rows.push(SummaryRow::new(arm(&pair), label, &model.report));
        let linear = if a.linear {
            let l = evaluate_linear(&test)?;
            rows.push(SummaryRow::new("linear", label, &l.report));
            Some(l)
        } else {
            None
        };
        let mut plotted: Vec<(&str, &[Vec<Vec<reciprocal::Point>>])> = vec![(arm(&pair), &model.predictions)];
        if let Some(l) = &linear {
            plotted.push(("linear", &l.predictions));
        }
        let plot_dir = if a.leave_one_out { a.out.join("plots").join(label) } else { a.out.join("plots") };
        output::write_plots(&plot_dir, &test, &plotted, a.plots)?;
        reports.push((arm(&pair), label.clone(), model.report));
        if let Some(l) = linear {
            reports.push(("linear", label.clone(), l.report));
        }
    }
    if a.leave_one_out {
        rows = output::with_average_rows(rows);
    }
    // Model rows first, then the comparator, as in a results table.
    rows.sort_by_key(|r| r.model == "linear");
    output::write_summary(&a.out.join("report.csv"), &rows)?;
    let refs: Vec<(&str, &str, &reciprocal::metrics::EvalReport)> = reports.iter().map(|(m, s, r)| (*m, s.as_str(), r)).collect();
    output::write_scenes(&a.out.join("per_scene.csv"), &refs)?;
    output::write_json(&a.out.join("report.json"), &EvalSummary { rows: &rows })?;
    for r in &rows {
        eprintln!("{:<10} {:<14} ADE {:.4} FDE {:.4} collisions {:.2}%", r.model, r.subset, r.ade, r.fde, r.collision_pct);
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    config: &'a AttackConfig,
    rows: &'a [SummaryRow],
    /// Fraction of scenes with `E^M <= E^0`.
    improved_fraction: f64,
    truncated_scenes: usize,
}

pub fn attack_eval(a: &AttackEvalArgs, exec: Execution) -> Result<()> {
    let cfg = AttackConfig {
        epsilon: a.epsilon,
        iterations: a.iterations,
        alpha: a.alpha,
    };
    cfg.validate()?;
    let ds = Dataset::open(&a.data)?;
    let pair = load_pair(&a.checkpoint)?;
    let test = ds.test_samples(a.subset.as_deref())?;
    if test.is_empty() {
        return Err(invalid("no test scenes to attack"));
    }
    let ev = attack_evaluate(&pair.forward.model.generator, &pair.backward.model.generator, &test, &cfg, a.seed, exec)?;
    let label = a.subset.clone().unwrap_or_else(|| "all".into());
    let rows = vec![
        SummaryRow::new("pre-attack", &label, &ev.pre.report),
        SummaryRow::new("post-attack", &label, &ev.post.report),
    ];
    output::write_summary(&a.out.join("report.csv"), &rows)?;
    output::write_scenes(
        &a.out.join("per_scene.csv"),
        &[("pre-attack", &label, &ev.pre.report), ("post-attack", &label, &ev.post.report)],
    )?;
    output::write_curves(&a.out.join("e_curves.csv"), &ev.curves)?;
    output::write_json(
        &a.out.join("report.json"),
        &AttackSummary {
            config: &cfg,
            rows: &rows,
            improved_fraction: ev.improved_fraction(),
            truncated_scenes: ev.curves.iter().filter(|c| c.truncated_at.is_some()).count(),
        },
    )?;
    output::write_plots(
        &a.out.join("plots"),
        &test,
        &[("pre-attack", &ev.pre.predictions), ("post-attack", &ev.post.predictions)],
        a.plots,
    )?;
    for r in &rows {
        eprintln!("{:<11} ADE {:.4} FDE {:.4} collisions {:.2}%", r.model, r.ade, r.fde, r.collision_pct);
    }
    eprintln!("matching error reduced on {:.1}% of scenes", 100.0 * ev.improved_fraction());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["recip", "train", "--data", "d"];
        argv.extend_from_slice(extra);
        match crate::Cli::try_parse_from(argv).unwrap().command {
            crate::Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn modes_map_to_training_configs() {
        let (m, t) = configs(&train_args(&[])).unwrap();
        assert_eq!((t.lambda, t.gan_weight, t.epochs, t.pretrain_epochs, m.social_pooling), (0.5, 1.0, 50, 20, true));
        let (_, t) = configs(&train_args(&["--mode", "baseline"])).unwrap();
        assert_eq!(t.lambda, 1.0);
        let (m, t) = configs(&train_args(&["--mode", "lstm"])).unwrap();
        assert_eq!((t.lambda, t.gan_weight, m.social_pooling), (1.0, 0.0, false));
        let (_, t) = configs(&train_args(&["--epochs", "5"])).unwrap();
        assert_eq!(t.pretrain_epochs, 5);
        assert!(configs(&train_args(&["--mode", "baseline", "--lambda", "0.3"])).is_err());
        assert!(configs(&train_args(&["--lambda", "1.5"])).is_err());
    }

    #[test]
    fn run_configs_round_trip_through_json() {
        let cmd = crate::Command::Train(train_args(&["--lambda", "0.25", "--holdout", "x"]));
        let text = serde_json::to_string(&cmd).unwrap();
        assert!(text.starts_with("{\"command\":\"train\""));
        assert_eq!(serde_json::from_str::<crate::Command>(&text).unwrap(), cmd);
    }
}
