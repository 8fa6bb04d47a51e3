//! On-disk dataset layout: a `manifest.json` listing subsets, each with a
//! train and a test sample file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use reciprocal::data::{SampleStore, SceneSample, OBS_LEN, PRED_LEN};

use crate::invalid;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    pub name: String,
    /// Relative to the dataset directory.
    pub train: String,
    pub test: String,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub train_sha256: String,
    pub test_sha256: String,
    /// Generator settings or source file of this subset.
    pub source: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: Option<u64>,
    pub obs_len: usize,
    pub pred_len: usize,
    pub subsets: Vec<SubsetEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the train/test files of one subset and returns its manifest entry.
/// A dataset with a single subset keeps its files at the top level.
pub fn write_subset(
    dir: &Path,
    name: &str,
    nested: bool,
    train: Vec<SceneSample>,
    test: Vec<SceneSample>,
    source: serde_json::Value,
) -> Result<SubsetEntry> {
    let prefix = if nested { format!("{name}/") } else { String::new() };
    if nested {
        fs::create_dir_all(dir.join(name))?;
    }
    let write = |file: &str, samples: Vec<SceneSample>| -> Result<(String, usize, String)> {
        let n = samples.len();
        let store = SampleStore::new(OBS_LEN, PRED_LEN, samples)?;
        let text = store.to_json();
        let rel = format!("{prefix}{file}");
        fs::write(dir.join(&rel), &text).with_context(|| format!("writing {rel}"))?;
        Ok((rel, n, sha256_hex(text.as_bytes())))
    };
    let (train, train_scenes, train_sha256) = write("train.json", train)?;
    let (test, test_scenes, test_sha256) = write("test.json", test)?;
    Ok(SubsetEntry {
        name: name.to_string(),
        train,
        test,
        train_scenes,
        test_scenes,
        train_sha256,
        test_sha256,
        source,
    })
}

/// Splits `samples` into a leading train part and a trailing test part.
pub fn split(mut samples: Vec<SceneSample>, test_fraction: f64) -> Result<(Vec<SceneSample>, Vec<SceneSample>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let n_test = ((samples.len() as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == samples.len() {
        return Err(invalid(format!(
            "{} scenes cannot be split with test fraction {test_fraction}",
            samples.len()
        )));
    }
    let test = samples.split_off(samples.len() - n_test);
    Ok((samples, test))
}

pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(invalid(format!("no dataset manifest at {}", path.display())));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| invalid(format!("malformed manifest {}: {e}", path.display())))?;
        if manifest.subsets.is_empty() {
            return Err(invalid("dataset has no subsets"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.manifest.subsets.iter().map(|s| s.name.as_str()).collect()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.manifest
            .subsets
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| invalid(format!("unknown subset {name:?}; available: {}", self.names().join(", "))))
    }

    fn load(&self, rel: &str, sha: &str) -> Result<Vec<SceneSample>> {
        let path = self.dir.join(rel);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if sha256_hex(text.as_bytes()) != sha {
            anyhow::bail!("{} does not match its manifest checksum", path.display());
        }
        Ok(SampleStore::from_json(&text)?.samples)
    }

    /// Training scenes of every subset except `holdout`, in manifest order.
    pub fn train_samples(&self, holdout: Option<&str>) -> Result<Vec<SceneSample>> {
        let skip = holdout.map(|h| self.index(h)).transpose()?;
        let mut out = Vec::new();
        for (i, s) in self.manifest.subsets.iter().enumerate() {
            if Some(i) != skip {
                out.extend(self.load(&s.train, &s.train_sha256)?);
            }
        }
        if out.is_empty() {
            return Err(invalid("no training scenes left after the holdout"));
        }
        Ok(out)
    }

    /// Test scenes of `subset`, or of every subset.
    pub fn test_samples(&self, subset: Option<&str>) -> Result<Vec<SceneSample>> {
        let mut out = Vec::new();
        for s in &self.manifest.subsets {
            if subset.is_none_or(|n| n == s.name) {
                out.extend(self.load(&s.test, &s.test_sha256)?);
            }
        }
        if let Some(n) = subset {
            self.index(n)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenes(n: usize) -> Vec<SceneSample> {
        (0..n)
            .map(|i| SceneSample {
                agent_ids: vec![i as u64],
                observed: vec![vec![[0.0, 0.0]; 2]],
                future: vec![vec![[1.0, 0.0]]],
                context: None,
            })
            .collect()
    }

    #[test]
    fn split_keeps_order_and_rounds() {
        let (train, test) = split(scenes(10), 0.25).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(test[0].agent_ids, vec![7]);
        assert!(split(scenes(10), 0.0).is_err());
        assert!(split(scenes(10), 1.0).is_err());
        assert!(split(scenes(1), 0.2).is_err());
    }
}
