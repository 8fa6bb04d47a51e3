use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recip(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recip"))
        .args(args)
        .env("RECIP_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) {
    let out = recip(root, args);
    assert!(out.status.success(), "recip {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
}

fn small_dataset(root: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["generate", "--scenes", "20", "--agents", "2", "--seed", "3", "--out", out];
    args.extend_from_slice(extra);
    ok(root, &args);
}

const TRAIN: [&str; 8] = ["--epochs", "3", "--pretrain-epochs", "1", "--batch-size", "8", "--seed", "1"];

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "a", &[]);
    small_dataset(dir.path(), "b", &[]);
    for f in ["train.json", "test.json", "manifest.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(recip(root, &["generate", "--agents", "33", "--out", "bad"]).status.code(), Some(1));
    assert!(!root.join("bad").exists(), "a rejected run leaves no output");
    assert_eq!(recip(root, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(recip(root, &["--help"]).status.code(), Some(0));
    assert_eq!(recip(root, &["train", "--data", "missing"]).status.code(), Some(1));

    small_dataset(root, "data", &[]);
    fs::write(root.join("broken.ckpt"), b"RCPRCKPT truncated").unwrap();
    let out = recip(root, &["eval", "--checkpoint", "broken.ckpt", "--data", "data", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resume_reproduces_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "data", &[]);
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--data", "data", "--out", out];
        args.extend_from_slice(&TRAIN);
        args.extend_from_slice(extra);
        ok(root, &args);
    };
    train("full", &[]);
    train("part", &["--stop-after", "2"]);
    train("resumed", &["--resume", "part/model.ckpt"]);
    for f in ["model.ckpt", "losses.csv"] {
        assert_eq!(fs::read(root.join("full").join(f)).unwrap(), fs::read(root.join("resumed").join(f)).unwrap(), "{f}");
    }
    // 20 scenes -> 16 train -> 2 batches, two networks, three epochs.
    let losses = fs::read_to_string(root.join("full/losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn zero_step_attack_leaves_predictions_unchanged_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "data", &[]);
    let mut args = vec!["train", "--data", "data", "--out", "tr"];
    args.extend_from_slice(&TRAIN);
    ok(root, &args);
    ok(
        root,
        &["attack-eval", "--checkpoint", "tr/model.ckpt", "--data", "data", "--iterations", "1", "--epsilon", "0", "--out", "at"],
    );
    let report = fs::read_to_string(root.join("at/report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][4..], rows[1][4..], "pre and post metrics differ: {report}");
    let curves = fs::read_to_string(root.join("at/e_curves.csv")).unwrap();
    assert!(curves.starts_with("scene,iteration,matching_error,ade"));
    assert_eq!(curves.lines().count(), 1 + 4 * 2);

    ok(root, &["replay", "at/resolved_config.json", "--out", "again"]);
    for f in ["report.csv", "per_scene.csv", "e_curves.csv"] {
        assert_eq!(fs::read(root.join("at").join(f)).unwrap(), fs::read(root.join("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn leave_one_out_reports_every_subset_and_an_average() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "data", &["--subsets", "3"]);
    let mut args = vec!["train", "--data", "data", "--leave-one-out", "--out", "loo"];
    args.extend_from_slice(&["--epochs", "1", "--pretrain-epochs", "1", "--batch-size", "8"]);
    ok(root, &args);
    ok(
        root,
        &["eval", "--checkpoint", "loo", "--data", "data", "--leave-one-out", "--k", "2", "--plots", "1", "--out", "ev"],
    );
    let report = fs::read_to_string(root.join("ev/report.csv")).unwrap();
    let subsets: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(subsets, ["synthetic-0", "synthetic-1", "synthetic-2", "avg"]);
    let svg = fs::read_to_string(root.join("ev/plots/synthetic-1/scene_0000.svg")).unwrap();
    assert!(svg.contains("<polyline"));
}

#[test]
fn ingests_eth_ucy_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut text = String::new();
    for frame in 0..30 {
        for agent in 1..=2 {
            // Agent 2 leaves after frame 24.
            if agent == 1 || frame < 25 {
                text.push_str(&format!("{} {agent} {:.2} {:.2}\n", 10 * frame, 0.4 * frame as f64, agent as f64));
            }
        }
    }
    fs::write(root.join("walk.txt"), &text).unwrap();
    ok(root, &["ingest", "--input", "walk.txt", "--test-fraction", "0.25", "--out", "eth"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("eth/manifest.json")).unwrap()).unwrap();
    let subset = &manifest["subsets"][0];
    assert_eq!(subset["name"], "walk");
    // 30 frames give 11 windows; 3 go to the test split.
    assert_eq!((subset["train_scenes"].as_u64(), subset["test_scenes"].as_u64()), (Some(8), Some(3)));

    fs::write(root.join("bad.txt"), "0 1 0.0 0.0\n10 1 0.5\n").unwrap();
    let out = recip(root, &["ingest", "--input", "bad.txt", "--out", "bad"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
