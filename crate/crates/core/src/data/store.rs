//! Versioned JSON sample store.
//!
//! ```json
//! { "schema": "reciprocal-traj/samples", "version": 1, "dt": 0.4,
//!   "obs_len": 8, "pred_len": 12,
//!   "samples": [ { "agent_ids": [..], "observed": [[[x, y], ..], ..],
//!                  "future": [..], "context": [..] } ] }
//! ```
//! `context` is omitted when absent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, SceneSample, DT};

pub const SAMPLE_SCHEMA: &str = "reciprocal-traj/samples";
pub const SAMPLE_STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    pub schema: String,
    pub version: u32,
    pub dt: f64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub samples: Vec<SceneSample>,
}

impl SampleStore {
    /// Wraps samples; all must share the given segment lengths.
    pub fn new(obs_len: usize, pred_len: usize, samples: Vec<SceneSample>) -> Result<Self, DataError> {
        let store = Self {
            schema: SAMPLE_SCHEMA.to_string(),
            version: SAMPLE_STORE_VERSION,
            dt: DT,
            obs_len,
            pred_len,
            samples,
        };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema != SAMPLE_SCHEMA {
            return Err(DataError::Store(format!("unknown schema `{}`", self.schema)));
        }
        if self.version != SAMPLE_STORE_VERSION {
            return Err(DataError::Store(format!(
                "unsupported version {} (expected {SAMPLE_STORE_VERSION})",
                self.version
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.validate().map_err(|e| DataError::Store(format!("sample {i}: {e}")))?;
            if s.obs_len() != self.obs_len || s.pred_len() != self.pred_len {
                return Err(DataError::Store(format!("sample {i}: segment lengths differ from header")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sample store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let store: Self = serde_json::from_str(text).map_err(|e| DataError::Store(e.to_string()))?;
        store.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }
}
