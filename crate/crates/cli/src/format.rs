//! Embedding files.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! "OTEM"  u16 version (=1)  u32 n  u32 d
//! f32 × (n·d)   row-major payload
//! [u8 flag = 1, u32 × n labels]   optional
//! ```
//!
//! Files ending in `.csv` hold a `dim=d` line followed by one comma-separated
//! row per sample.

use std::path::Path;

use otward_core::linalg::Matrix;
use otward_core::metrics::{EmbeddingSet, MetricError};
use thiserror::Error;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"OTEM";
pub const EMBEDDING_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not an embedding file (bad magic)")]
    BadMagic,
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: need {expected} bytes, file has {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("inconsistent header: {0}")]
    InconsistentHeader(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Embeddings(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub fn encode_embeddings(e: &EmbeddingSet) -> Result<Vec<u8>> {
    let (n, d) = (e.len(), e.dim());
    let n32 = u32::try_from(n).map_err(|_| FormatError::InconsistentHeader(format!("{n} rows exceed u32")))?;
    let d32 = u32::try_from(d).map_err(|_| FormatError::InconsistentHeader(format!("dimension {d} exceeds u32")))?;
    let labels = e.labels();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d + labels.map_or(0, |l| 1 + 4 * l.len()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for &v in e.points().as_slice() {
        let x = v as f32;
        if !x.is_finite() {
            return Err(FormatError::InconsistentHeader(format!("value {v} does not fit in f32")));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(labels) = labels {
        out.push(1);
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(if bytes.len() < 4 {
            FormatError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            }
        } else {
            FormatError::BadMagic
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EMBEDDING_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if n == 0 || d == 0 {
        return Err(FormatError::InconsistentHeader(format!("n = {n}, d = {d}")));
    }
    let end = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| FormatError::InconsistentHeader(format!("n = {n}, d = {d} overflows")))?;
    if bytes.len() < end {
        return Err(FormatError::TruncatedPayload {
            expected: end,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let set = EmbeddingSet::new(Matrix::from_vec(n, d, data).map_err(MetricError::from)?)?;
    let tail = &bytes[end..];
    match tail.first() {
        None => Ok(set),
        Some(0) if tail.len() == 1 => Ok(set),
        Some(1) if tail.len() == 1 + 4 * n => {
            let labels = tail[1..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(set.with_labels(labels)?)
        }
        Some(1) if tail.len() < 1 + 4 * n => Err(FormatError::TruncatedPayload {
            expected: end + 1 + 4 * n,
            found: bytes.len(),
        }),
        Some(_) => Err(FormatError::InconsistentHeader(format!(
            "{} unexpected bytes after the payload",
            tail.len()
        ))),
    }
}

pub fn read_csv(path: &Path) -> Result<EmbeddingSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| FormatError::Csv("empty file".into()))??;
    let d: usize = header
        .get(0)
        .and_then(|h| h.strip_prefix("dim="))
        .and_then(|v| v.parse().ok())
        .filter(|_| header.len() == 1)
        .ok_or_else(|| FormatError::InconsistentHeader("first line must be dim=<d>".into()))?;
    let mut data = Vec::new();
    let mut n = 0;
    for rec in records {
        let rec = rec?;
        if rec.len() != d {
            return Err(FormatError::InconsistentHeader(format!(
                "row {} has {} values, header says {d}",
                n + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|_| FormatError::Csv(format!("row {}: not a number: {field:?}", n + 1)))?,
            );
        }
        n += 1;
    }
    if n == 0 || d == 0 {
        return Err(FormatError::InconsistentHeader(format!("n = {n}, d = {d}")));
    }
    Ok(EmbeddingSet::new(Matrix::from_vec(n, d, data).map_err(MetricError::from)?)?)
}

pub fn write_csv(path: &Path, e: &EmbeddingSet) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record([format!("dim={}", e.dim())])?;
    for i in 0..e.len() {
        w.write_record(e.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv"))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let set = if is_csv(path) {
        read_csv(path)?
    } else {
        decode_embeddings(&std::fs::read(path)?)?
    };
    Ok(set.with_source_id(path.display().to_string()))
}

pub fn write_embeddings(path: impl AsRef<Path>, e: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_csv(path, e)
    } else {
        Ok(std::fs::write(path, encode_embeddings(e)?)?)
    }
}
