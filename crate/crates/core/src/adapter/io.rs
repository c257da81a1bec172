//! Binary adapter files.
//!
//! ```text
//! "OTAD"  u16 version  u32 d
//! f32 × (d·h)  w1   (row-major, h = ⌊d/4⌋)
//! f32 × h      b1, norm_gain, norm_bias
//! f32 × (h·d)  w2
//! f32 × d      b2
//! f32          dropout rate
//! u64          FNV-1a of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Values are stored as f32, so a
//! write–read cycle rounds parameters to single precision once; after that the
//! encoding is a fixed point.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use super::{AdapterError, AdapterParams, Result};
use crate::linalg::Matrix;

pub const ADAPTER_MAGIC: &[u8; 4] = b"OTAD";
pub const ADAPTER_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode_adapter(p: &AdapterParams) -> Result<Vec<u8>> {
    p.validate()?;
    let d = p.dim();
    if p.hidden() != d / 4 {
        return Err(AdapterError::Format(format!(
            "only hidden width ⌊d/4⌋ = {} is storable, adapter has {}",
            d / 4,
            p.hidden()
        )));
    }
    let d32 = u32::try_from(d).map_err(|_| AdapterError::Format("dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (p.num_params() + 1) + 8);
    out.extend_from_slice(ADAPTER_MAGIC);
    out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in p.flatten().into_iter().chain([p.dropout_rate]) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn decode_adapter(bytes: &[u8]) -> Result<AdapterParams> {
    if bytes.len() < HEADER_LEN {
        return Err(AdapterError::Format("truncated header".into()));
    }
    if &bytes[..4] != ADAPTER_MAGIC {
        return Err(AdapterError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ADAPTER_VERSION {
        return Err(AdapterError::Format(format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let h = d / 4;
    if h == 0 {
        return Err(AdapterError::Format(format!("dimension {d} leaves no hidden units")));
    }
    let n_params = 2 * d * h + 3 * h + d;
    let payload_end = HEADER_LEN + 4 * (n_params + 1);
    if bytes.len() < payload_end + 8 {
        return Err(AdapterError::Format("truncated payload".into()));
    }
    if bytes.len() > payload_end + 8 {
        return Err(AdapterError::Format("trailing bytes after checksum".into()));
    }
    let stored = u64::from_le_bytes(bytes[payload_end..].try_into().expect("8 bytes"));
    if stored != checksum(&bytes[..payload_end]) {
        return Err(AdapterError::Format("checksum mismatch".into()));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let mut p = AdapterParams {
        w1: Matrix::zeros(d, h),
        b1: vec![0.0; h],
        norm_gain: vec![0.0; h],
        norm_bias: vec![0.0; h],
        w2: Matrix::zeros(h, d),
        b2: vec![0.0; d],
        dropout_rate: values[n_params],
    };
    p.set_flat(&values[..n_params])?;
    p.validate()?;
    Ok(p)
}

pub fn write_adapter(path: impl AsRef<Path>, p: &AdapterParams) -> Result<()> {
    std::fs::write(path, encode_adapter(p)?)?;
    Ok(())
}

pub fn read_adapter(path: impl AsRef<Path>) -> Result<AdapterParams> {
    decode_adapter(&std::fs::read(path)?)
}
