//! Trajectory data: sample types, ETH/UCY ingestion, window extraction,
//! time reversal, normalization, synthetic scenes and the on-disk store.

mod eth_ucy;
mod normalize;
mod sample;
pub mod social_force;
mod store;

use thiserror::Error;

pub use eth_ucy::{extract_windows, load_eth_ucy, parse_eth_ucy, FrameRecord, WindowConfig};
pub use normalize::{denormalize, normalize, NormalizationMode, NormalizedSample};
pub use sample::{time_reverse, BackwardSample, SceneSample, Trajectory};
pub use social_force::{generate_social_force, generate_social_force_with, SocialForceConfig};
pub use store::{SampleStore, SAMPLE_SCHEMA, SAMPLE_STORE_VERSION};

/// Seconds between consecutive samples.
pub const DT: f64 = 0.4;
pub const OBS_LEN: usize = 8;
pub const PRED_LEN: usize = 12;
/// Maximum number of agents per scene, including the target.
pub const MAX_AGENTS: usize = 32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame id {found} precedes previous frame {previous}")]
    NonMonotoneFrame { line: usize, previous: i64, found: i64 },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("sample store: {0}")]
    Store(String),
}
