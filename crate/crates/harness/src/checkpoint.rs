//! Binary checkpoints for [`MlpEpsModel`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "MNRTYCK\0"
//! version      u32
//! schedule     u64      base-schedule fingerprint the model was trained on
//! seed         u64
//! steps        u64      training steps taken
//! layers       u32      number of layer sizes that follow
//! sizes        u64 x layers
//! params       u64      parameter count, then f64 x count
//! checksum     u64      FNV-1a of every preceding byte
//! ```

use std::path::Path;

use minority_core::fingerprint::fnv64;
use minority_core::schedule::NoiseSchedule;
use minority_core::score_model::MlpEpsModel;

use crate::error::{CheckpointError, HarnessError, Result};
use crate::io::write_atomic;

pub const MAGIC: [u8; 8] = *b"MNRTYCK\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &MlpEpsModel, sched: &NoiseSchedule) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + 8 * model.params().len());
    b.extend_from_slice(&MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&sched.base_fingerprint().to_le_bytes());
    b.extend_from_slice(&model.seed().to_le_bytes());
    b.extend_from_slice(&(model.steps_trained() as u64).to_le_bytes());
    b.extend_from_slice(&(model.sizes().len() as u32).to_le_bytes());
    for s in model.sizes() {
        b.extend_from_slice(&(*s as u64).to_le_bytes());
    }
    b.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        b.extend_from_slice(&p.to_le_bytes());
    }
    let sum = fnv64(&b);
    b.extend_from_slice(&sum.to_le_bytes());
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let needed = self.pos.checked_add(n).ok_or(CheckpointError::Corrupt("length overflow".into()))?;
        if needed > self.bytes.len() {
            return Err(CheckpointError::Truncated { needed, available: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..needed];
        self.pos = needed;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> std::result::Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("length {v} does not fit in memory")))
    }
}

/// Decodes a checkpoint, checking it was trained on `sched`'s base schedule.
pub fn decode(bytes: &[u8], sched: &NoiseSchedule) -> std::result::Result<MlpEpsModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let head = &bytes[..bytes.len().min(MAGIC.len())];
    if head != &MAGIC[..head.len()] {
        return Err(CheckpointError::BadMagic);
    }
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, expected: VERSION });
    }
    let fp = r.u64()?;
    let seed = r.u64()?;
    let steps = r.len()?;
    let layers = r.u32()? as usize;
    let mut sizes = Vec::with_capacity(layers.min(64));
    for _ in 0..layers {
        sizes.push(r.len()?);
    }
    let count = r.len()?;
    // Check the length up front so a corrupt count cannot trigger a huge allocation.
    let body = r.take(count.checked_mul(8).ok_or(CheckpointError::Corrupt("parameter count overflow".into()))?)?;
    let params: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let end = r.pos;
    let stored = r.u64()?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if fnv64(&bytes[..end]) != stored {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    if fp != sched.base_fingerprint() {
        return Err(CheckpointError::FingerprintMismatch { expected: sched.base_fingerprint(), found: fp });
    }
    MlpEpsModel::from_parts(sizes, params, seed, steps).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

pub fn save_checkpoint(model: &MlpEpsModel, sched: &NoiseSchedule, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, sched))
}

pub fn load_checkpoint(path: &Path, sched: &NoiseSchedule) -> Result<MlpEpsModel> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(HarnessError::MissingCheckpoint { path: path.to_path_buf() }),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    decode(&bytes, sched).map_err(|source| HarnessError::Checkpoint { path: path.to_path_buf(), source })
}
