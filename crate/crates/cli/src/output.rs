//! CSV, JSON and SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use reciprocal::data::SceneSample;
use reciprocal::eval::AttackCurve;
use reciprocal::metrics::EvalReport;
use reciprocal::train::StepRecord;
use reciprocal::Point;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub subset: String,
    pub k: usize,
    pub scenes: usize,
    pub ade: f64,
    pub fde: f64,
    pub collision_pct: f64,
}

impl SummaryRow {
    pub fn new(model: &str, subset: &str, r: &EvalReport) -> Self {
        Self {
            model: model.to_string(),
            subset: subset.to_string(),
            k: r.k,
            scenes: r.scenes.len(),
            ade: r.ade,
            fde: r.fde,
            collision_pct: r.collision_pct,
        }
    }
}

/// Appends an unweighted mean row per model, as in a per-dataset results table.
pub fn with_average_rows(rows: Vec<SummaryRow>) -> Vec<SummaryRow> {
    let mut models: Vec<String> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    let mut out = rows.clone();
    for m in models {
        let of: Vec<&SummaryRow> = rows.iter().filter(|r| r.model == m).collect();
        let n = of.len() as f64;
        out.push(SummaryRow {
            model: m.clone(),
            subset: "avg".into(),
            k: of[0].k,
            scenes: of.iter().map(|r| r.scenes).sum(),
            ade: of.iter().map(|r| r.ade).sum::<f64>() / n,
            fde: of.iter().map(|r| r.fde).sum::<f64>() / n,
            collision_pct: of.iter().map(|r| r.collision_pct).sum::<f64>() / n,
        });
    }
    out
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Serialize)]
struct SceneRow<'a> {
    model: &'a str,
    subset: &'a str,
    scene: usize,
    agents: usize,
    ade: f64,
    fde: f64,
    collision_pct: f64,
    best_index: usize,
}

pub fn write_scenes(path: &Path, reports: &[(&str, &str, &EvalReport)]) -> Result<()> {
    write_rows(
        path,
        reports.iter().flat_map(|&(model, subset, r)| {
            r.scenes.iter().map(move |s| SceneRow {
                model,
                subset,
                scene: s.scene,
                agents: s.agents,
                ade: s.ade,
                fde: s.fde,
                collision_pct: s.collision_pct,
                best_index: s.best_index,
            })
        }),
    )
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    batch: usize,
    role: &'static str,
    lambda: f64,
    disc_loss: f64,
    adv_loss: f64,
    direct: f64,
    reconstruction: Option<f64>,
    total: f64,
}

pub fn write_losses(path: &Path, history: &[StepRecord]) -> Result<()> {
    write_rows(
        path,
        history.iter().map(|r| LossRow {
            epoch: r.epoch,
            batch: r.batch,
            role: r.role.as_str(),
            lambda: r.lambda,
            disc_loss: r.disc_loss,
            adv_loss: r.adv_loss,
            direct: r.direct,
            reconstruction: r.reconstruction,
            total: r.total,
        }),
    )
}

#[derive(Serialize)]
struct CurveRow {
    scene: usize,
    iteration: usize,
    matching_error: f64,
    ade: f64,
}

pub fn write_curves(path: &Path, curves: &[AttackCurve]) -> Result<()> {
    write_rows(
        path,
        curves.iter().flat_map(|c| {
            c.errors.iter().zip(&c.ade).enumerate().map(move |(m, (&e, &a))| CurveRow {
                scene: c.scene,
                iteration: m,
                matching_error: e,
                ade: a,
            })
        }),
    )
}

/// Observed (black), ground truth (green, dashed) and each predicted
/// trajectory set (colored) of one scene.
pub fn scene_svg(scene: &SceneSample, predictions: &[(&str, &[Vec<Point>])]) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 20.0;
    const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#9467bd", "#ff7f0e"];
    let all = scene
        .observed
        .iter()
        .chain(&scene.future)
        .chain(predictions.iter().flat_map(|p| p.1.iter()))
        .flatten();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    // y grows upward in world coordinates.
    let map = |p: &Point| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);
    let polyline = |pts: &[Point], style: &str| {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!("  <polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (obs, fut) in scene.observed.iter().zip(&scene.future) {
        svg.push_str(&polyline(obs, "stroke=\"black\" stroke-width=\"2\""));
        let mut gt = vec![*obs.last().expect("non-empty track")];
        gt.extend(fut);
        svg.push_str(&polyline(&gt, "stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6 4\""));
    }
    for (i, (label, pred)) in predictions.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (obs, p) in scene.observed.iter().zip(pred.iter()) {
            let mut line = vec![*obs.last().expect("non-empty track")];
            line.extend(p);
            svg.push_str(&polyline(&line, &format!("stroke=\"{color}\" stroke-width=\"1.5\"")));
        }
        let _ = writeln!(
            svg,
            "  <text x=\"{MARGIN}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            MARGIN + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_plots(dir: &Path, scenes: &[SceneSample], predictions: &[(&str, &[Vec<Vec<Point>>])], count: usize) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    fs::create_dir_all(dir)?;
    for (i, scene) in scenes.iter().enumerate().take(count) {
        let preds: Vec<(&str, &[Vec<Point>])> = predictions.iter().map(|(l, p)| (*l, p[i].as_slice())).collect();
        fs::write(dir.join(format!("scene_{i:04}.svg")), scene_svg(scene, &preds))?;
    }
    Ok(())
}
