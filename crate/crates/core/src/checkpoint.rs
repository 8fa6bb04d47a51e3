//! Binary checkpoints of a [`ReciprocalPair`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "RCPRCKPT" | version u32 | architecture sha256 [32]
//! u32 block count, then per block: name (u32 len + utf8), rank u32, dims u64.., f64 data
//! 4 optimizer states (forward gen/disc, backward gen/disc):
//!     step u64, then per parameter: len u64, m f64.., v f64..
//! epochs_done u64 | history: u64 count, fixed-size records
//! config JSON: u64 len + utf8
//! sha256 of everything above [32]
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::ModelConfig;
use crate::nn::ParamStore;
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::train::{ReciprocalPair, Role, StepRecord, TrainConfig};

pub const MAGIC: &[u8; 8] = b"RCPRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the declared architecture: {0}")]
    Shape(String),
    #[error("checkpoint lacks parameter block {0}")]
    Missing(String),
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn stores(pair: &ReciprocalPair) -> [(&'static str, &ParamStore); 4] {
    [
        ("forward.", &pair.forward.model.generator.params),
        ("forward.", &pair.forward.model.discriminator.params),
        ("backward.", &pair.backward.model.generator.params),
        ("backward.", &pair.backward.model.discriminator.params),
    ]
}

/// SHA-256 over every parameter name and shape, in storage order.
pub fn architecture_hash(pair: &ReciprocalPair) -> [u8; 32] {
    let mut h = Sha256::new();
    for (prefix, store) in stores(pair) {
        for (name, t) in store.iter() {
            h.update(prefix.as_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update([0xff]);
        }
    }
    h.finalize().into()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        // Every counted item occupies at least one byte.
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(CheckpointError::Corrupt(format!("length {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn bytes(&mut self) -> Result<&[u8], CheckpointError> {
        let n = self.len()?;
        self.take(n)
    }
}

fn write_opt(w: &mut Writer, s: &AdamState) {
    w.u64(s.step);
    for (m, v) in s.m.iter().zip(&s.v) {
        w.u64(m.len() as u64);
        w.f64s(m);
        w.f64s(v);
    }
}

fn read_opt(r: &mut Reader<'_>, params: usize) -> Result<AdamState, CheckpointError> {
    let step = r.u64()?;
    let mut state = AdamState {
        step,
        m: Vec::with_capacity(params),
        v: Vec::with_capacity(params),
    };
    for _ in 0..params {
        let n = r.len()?;
        state.m.push(r.f64s(n)?);
        state.v.push(r.f64s(n)?);
    }
    Ok(state)
}

fn check_opt(state: &AdamState, store: &ParamStore, what: &str) -> Result<(), CheckpointError> {
    if state.matches(store) {
        Ok(())
    } else {
        Err(CheckpointError::Shape(format!("{what} optimizer moments do not match its parameters")))
    }
}

fn role_byte(r: Role) -> u8 {
    match r {
        Role::Forward => 0,
        Role::Backward => 1,
    }
}

/// Serializes `pair` to bytes.
pub fn encode(pair: &ReciprocalPair) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&architecture_hash(pair));

    let blocks: Vec<(String, &Tensor)> = stores(pair)
        .into_iter()
        .flat_map(|(prefix, s)| s.iter().map(move |(n, t)| (format!("{prefix}{n}"), t)))
        .collect();
    w.u32(blocks.len() as u32);
    for (name, t) in &blocks {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
        w.u32(t.rank() as u32);
        t.shape().iter().for_each(|d| w.u64(*d as u64));
        w.f64s(t.data());
    }
    for s in [&pair.forward.gen_opt, &pair.forward.disc_opt, &pair.backward.gen_opt, &pair.backward.disc_opt] {
        write_opt(&mut w, s);
    }
    w.u64(pair.epochs_done as u64);
    w.u64(pair.history.len() as u64);
    for h in &pair.history {
        w.u64(h.epoch as u64);
        w.u64(h.batch as u64);
        w.u8(role_byte(h.role));
        w.f64(h.lambda);
        w.f64(h.disc_loss);
        w.f64(h.adv_loss);
        w.f64(h.direct);
        w.u8(h.reconstruction.is_some() as u8);
        w.f64(h.reconstruction.unwrap_or(0.0));
        w.f64(h.total);
    }
    let cfg = StoredConfig {
        model: pair.model_config.clone(),
        train: pair.train_config.clone(),
    };
    w.bytes(serde_json::to_string_pretty(&cfg).expect("config serializes").as_bytes());
    let digest: [u8; 32] = Sha256::digest(&w.0).into();
    w.0.extend_from_slice(&digest);
    w.0
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<ReciprocalPair, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::Corrupt("file too short".into()))? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < r.pos + 64 {
        return Err(CheckpointError::Corrupt("file truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt("checksum mismatch (truncated or modified file)".into()));
    }
    let mut r = Reader { buf: body, pos: r.pos };
    let arch: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");

    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| CheckpointError::Corrupt("non-utf8 block name".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| CheckpointError::Corrupt(format!("shape overflow in {name}")))?;
        let data = r.f64s(numel)?;
        blocks.push((name, Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?));
    }
    let counts: Vec<usize> = ["forward.gen.", "forward.disc.", "backward.gen.", "backward.disc."]
        .iter()
        .map(|p| blocks.iter().filter(|(n, _)| n.starts_with(p)).count())
        .collect();
    let opts = counts.iter().map(|&c| read_opt(&mut r, c)).collect::<Result<Vec<_>, _>>()?;
    let epochs_done = r.u64()? as usize;
    let n = r.len()?;
    let history = (0..n)
        .map(|_| -> Result<StepRecord, CheckpointError> {
            let epoch = r.u64()? as usize;
            let batch = r.u64()? as usize;
            let role = match r.u8()? {
                0 => Role::Forward,
                1 => Role::Backward,
                b => return Err(CheckpointError::Corrupt(format!("bad role byte {b}"))),
            };
            let lambda = r.f64()?;
            let disc_loss = r.f64()?;
            let adv_loss = r.f64()?;
            let direct = r.f64()?;
            let has = r.u8()? == 1;
            let rec = r.f64()?;
            let total = r.f64()?;
            Ok(StepRecord {
                epoch,
                batch,
                role,
                lambda,
                disc_loss,
                adv_loss,
                direct,
                reconstruction: has.then_some(rec),
                total,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg: StoredConfig = serde_json::from_slice(r.bytes()?).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing data after config".into()));
    }

    let mut pair = ReciprocalPair::new(&cfg.model, &cfg.train).map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    if architecture_hash(&pair) != arch {
        return Err(CheckpointError::Shape("architecture hash differs from the stored configuration".into()));
    }
    let mut by_name: std::collections::HashMap<String, Tensor> = blocks.into_iter().collect();
    let mut fill = |prefix: &str, store: &mut ParamStore| -> Result<(), CheckpointError> {
        let names = store.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let key = format!("{prefix}{name}");
            let t = by_name.remove(&key).ok_or_else(|| CheckpointError::Missing(key.clone()))?;
            if t.shape() != store.tensors()[i].shape() {
                return Err(CheckpointError::Shape(format!(
                    "{key}: stored {:?}, declared {:?}",
                    t.shape(),
                    store.tensors()[i].shape()
                )));
            }
            store.tensors_mut()[i] = t;
        }
        Ok(())
    };
    fill("forward.", &mut pair.forward.model.generator.params)?;
    fill("forward.", &mut pair.forward.model.discriminator.params)?;
    fill("backward.", &mut pair.backward.model.generator.params)?;
    fill("backward.", &mut pair.backward.model.discriminator.params)?;
    if let Some(extra) = by_name.keys().next() {
        return Err(CheckpointError::Shape(format!("unexpected parameter block {extra}")));
    }
    let [fg, fd, bg, bd]: [AdamState; 4] = opts.try_into().expect("four states");
    check_opt(&fg, &pair.forward.model.generator.params, "forward generator")?;
    check_opt(&fd, &pair.forward.model.discriminator.params, "forward discriminator")?;
    check_opt(&bg, &pair.backward.model.generator.params, "backward generator")?;
    check_opt(&bd, &pair.backward.model.discriminator.params, "backward discriminator")?;
    pair.forward.gen_opt = fg;
    pair.forward.disc_opt = fd;
    pair.backward.gen_opt = bg;
    pair.backward.disc_opt = bd;
    pair.epochs_done = epochs_done;
    pair.history = history;
    Ok(pair)
}

/// Writes `pair` to `path` atomically.
pub fn save_checkpoint(pair: &ReciprocalPair, path: &Path) -> Result<()> {
    let bytes = encode(pair);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ReciprocalPair> {
    Ok(decode(&fs::read(path)?)?)
}
