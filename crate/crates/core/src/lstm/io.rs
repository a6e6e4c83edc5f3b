//! Binary model file.
//!
//! ```text
//! "PDML" | u16 version | u32 d | u32 h | u32 F | tensors as f64 | u64 checksum
//! ```
//!
//! All integers and floats are little-endian. Tensors are written row-major
//! in the order `W_i W_f W_o W_g b_i b_f b_o b_g W_y b_y`. The trailing
//! checksum is 64-bit FNV-1a over every preceding byte.

use std::fs;
use std::path::Path;

use super::{LstmError, LstmParams, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PDML";
pub const MODEL_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 3 * 4;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn write_model(params: &LstmParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.param_count() + 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for dim in [params.input_size, params.hidden_size, params.output_size] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn read_model(bytes: &[u8]) -> Result<LstmParams> {
    if bytes.len() < 4 {
        return Err(LstmError::Corruption("file shorter than magic".into()));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(LstmError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LstmError::Corruption("truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(LstmError::Version(version));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[6 + 4 * k..10 + 4 * k].try_into().unwrap()) as usize;
    let (d, h, f) = (dim(0), dim(1), dim(2));
    let count = (|| {
        let gate = h.checked_mul(d.checked_add(h)?)?;
        gate.checked_mul(4)?
            .checked_add(h.checked_mul(4)?)?
            .checked_add(f.checked_mul(h)?)?
            .checked_add(f)
    })()
    .ok_or_else(|| LstmError::Corruption("dimensions overflow".into()))?;
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN + 8))
        .ok_or_else(|| LstmError::Corruption("dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(LstmError::Corruption(format!(
            "truncated: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(LstmError::Corruption(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - 8];
    let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(LstmError::Corruption("checksum mismatch".into()));
    }
    let mut params = LstmParams::zeros(d, h, f);
    let mut values = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    Ok(params)
}

pub fn save_model(params: &LstmParams, path: impl AsRef<Path>) -> Result<()> {
    if !params.shapes_consistent() {
        return Err(LstmError::InvalidArgument("parameter tensors inconsistent with (d, h, F)".into()));
    }
    fs::write(path, write_model(params))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmParams> {
    read_model(&fs::read(path)?)
}
