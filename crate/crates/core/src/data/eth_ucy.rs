//! ETH/UCY text format: `frame_id agent_id x y` per line, whitespace separated,
//! world coordinates in meters.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{DataError, SceneSample, MAX_AGENTS, OBS_LEN, PRED_LEN};
use crate::Point;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: i64,
    pub agent: u64,
    pub pos: Point,
}

pub fn load_eth_ucy(path: impl AsRef<Path>) -> crate::Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_eth_ucy(&text)?)
}

/// Parses the text format. Blank lines and lines starting with `#` are
/// skipped. Frame ids must be non-decreasing. Output is sorted by frame,
/// then agent id.
pub fn parse_eth_ucy(text: &str) -> Result<Vec<FrameRecord>, DataError> {
    let mut out = Vec::new();
    let mut previous: Option<i64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(DataError::Parse {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    line,
                    message: format!("bad {what} `{s}`"),
                })
        };
        let integral = |v: f64, what: &str| {
            if v.fract() == 0.0 {
                Ok(v)
            } else {
                Err(DataError::Parse {
                    line,
                    message: format!("{what} `{v}` is not an integer"),
                })
            }
        };
        let frame = integral(num(fields[0], "frame id")?, "frame id")? as i64;
        let agent = integral(num(fields[1], "agent id")?, "agent id")?;
        if agent < 0.0 {
            return Err(DataError::Parse {
                line,
                message: format!("negative agent id {agent}"),
            });
        }
        let pos = [num(fields[2], "x")?, num(fields[3], "y")?];
        if let Some(p) = previous {
            if frame < p {
                return Err(DataError::NonMonotoneFrame {
                    line,
                    previous: p,
                    found: frame,
                });
            }
        }
        previous = Some(frame);
        out.push(FrameRecord {
            frame,
            agent: agent as u64,
            pos,
        });
    }
    // Frames are already ordered; a stable sort orders agents within a frame.
    out.sort_by_key(|r| (r.frame, r.agent));
    if let Some(w) = out.windows(2).find(|w| w[0].frame == w[1].frame && w[0].agent == w[1].agent) {
        return Err(DataError::Parse {
            line: 0,
            message: format!("agent {} appears twice in frame {}", w[0].agent, w[0].frame),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            obs_len: OBS_LEN,
            pred_len: PRED_LEN,
            stride: 1,
        }
    }
}

/// Slides a window over the distinct frames. Only agents present in every
/// frame of a window are kept (at most [`MAX_AGENTS`], lowest ids first);
/// windows without such agents are dropped.
pub fn extract_windows(records: &[FrameRecord], cfg: WindowConfig) -> Vec<SceneSample> {
    let mut frames: BTreeMap<i64, HashMap<u64, Point>> = BTreeMap::new();
    for r in records {
        frames.entry(r.frame).or_default().insert(r.agent, r.pos);
    }
    let frames: Vec<&HashMap<u64, Point>> = frames.values().collect();
    let len = cfg.obs_len + cfg.pred_len;
    let stride = cfg.stride.max(1);
    let mut out = Vec::new();
    if len == 0 || frames.len() < len {
        return out;
    }
    let mut start = 0;
    while start + len <= frames.len() {
        let window = &frames[start..start + len];
        let mut agents: Vec<u64> = window[0]
            .keys()
            .copied()
            .filter(|a| window.iter().all(|f| f.contains_key(a)))
            .collect();
        agents.sort_unstable();
        agents.truncate(MAX_AGENTS);
        if !agents.is_empty() {
            let track = |a: u64, range: std::ops::Range<usize>| -> Vec<Point> {
                window[range].iter().map(|f| f[&a]).collect()
            };
            out.push(SceneSample {
                observed: agents.iter().map(|&a| track(a, 0..cfg.obs_len)).collect(),
                future: agents.iter().map(|&a| track(a, cfg.obs_len..len)).collect(),
                agent_ids: agents,
                context: None,
            });
        }
        start += stride;
    }
    out
}
