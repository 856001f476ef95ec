//! Binary model blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DBVM"
//! 4       8     architecture fingerprint (FNV-1a 64 of canonical JSON)
//! 12      8     parameter count n
//! 20      4n    parameters as IEEE-754 f32
//! ```

use super::arch::ArchSpec;
use super::model::ModelState;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"DBVM";
const HEADER_LEN: usize = 20;

pub fn encode_model(model: &ModelState) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * model.param_count());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&model.arch().fingerprint().to_le_bytes());
    out.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for &p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

/// Decodes a blob written by [`encode_model`]; `arch` must match the one
/// the blob was written with. Returns the model and the bytes consumed.
pub fn decode_model(bytes: &[u8], arch: ArchSpec) -> Result<(ModelState, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {:?}", &bytes[..4])));
    }
    let hash = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    if hash != arch.fingerprint() {
        return Err(Error::Checkpoint(format!(
            "architecture fingerprint {hash:#018x} does not match {:#018x}",
            arch.fingerprint()
        )));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Checkpoint("parameter count overflow".into()))?;
    if bytes.len() < end {
        return Err(Error::Checkpoint(format!(
            "truncated parameters: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let params = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((ModelState::new(arch, params)?, end))
}
