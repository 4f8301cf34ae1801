//! `NPCATTN1` dump files.
//!
//! Layout:
//! - 8 bytes magic `NPCATTN1`
//! - u32 little-endian header length
//! - UTF-8 JSON header `{version, kind, dims: {T,B,H,Q,L}, head_dim?, salient_indices?, producer?}`
//! - `T*B*H*Q*L` f32 little-endian values, t-major then b, h, q, k

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AttentionDump, AttentionError, Dims, DumpKind};

pub const MAGIC: &[u8; 8] = b"NPCATTN1";
const VERSION: u32 = 1;
/// Headers are small JSON objects; anything larger is treated as corrupt.
const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum DumpFormatError {
    #[error("not an NPCATTN1 file (magic {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("truncated {section}: expected {expected} bytes, got {got}")]
    Truncated {
        section: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("header length {0} exceeds limit")]
    HeaderTooLarge(u32),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Invalid(#[from] AttentionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: DumpKind,
    dims: Dims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_dim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    salient_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    producer: Option<String>,
}

pub fn write_dump<W: Write>(dump: &AttentionDump, mut w: W) -> Result<(), DumpFormatError> {
    let header = Header {
        version: VERSION,
        kind: dump.kind,
        dims: dump.dims,
        head_dim: dump.head_dim,
        salient_indices: dump.salient_indices.clone(),
        producer: dump.producer.clone(),
    };
    let json =
        serde_json::to_vec(&header).map_err(|e| DumpFormatError::BadHeader(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(dump.values.len() * 4);
    for v in &dump.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Read exactly `buf.len()` bytes, reporting how many arrived on a short read.
fn fill(r: &mut impl Read, buf: &mut [u8], section: &'static str) -> Result<(), DumpFormatError> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(DumpFormatError::Truncated {
                    section,
                    expected: buf.len(),
                    got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<AttentionDump, DumpFormatError> {
    let mut magic = [0u8; 8];
    match fill(&mut r, &mut magic, "magic") {
        Err(DumpFormatError::Truncated { got, .. }) => {
            return Err(DumpFormatError::BadMagic {
                found: magic[..got].to_vec(),
            })
        }
        other => other?,
    }
    if &magic != MAGIC {
        return Err(DumpFormatError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let mut len = [0u8; 4];
    fill(&mut r, &mut len, "header length")?;
    let header_len = u32::from_le_bytes(len);
    if header_len > MAX_HEADER_LEN {
        return Err(DumpFormatError::HeaderTooLarge(header_len));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    fill(&mut r, &mut header_bytes, "header")?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| DumpFormatError::BadHeader(e.to_string()))?;
    if header.version != VERSION {
        return Err(DumpFormatError::UnsupportedVersion(header.version));
    }
    header.dims.validate()?;
    let numel = header.dims.numel();
    let byte_len = numel
        .checked_mul(4)
        .ok_or_else(|| DumpFormatError::BadHeader("payload size overflows".into()))?;
    let mut payload = vec![0u8; byte_len];
    fill(&mut r, &mut payload, "payload")?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DumpFormatError::TrailingBytes(rest.len()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut dump = AttentionDump::new(header.dims, header.kind, values)?;
    dump.head_dim = header.head_dim;
    dump.producer = header.producer;
    if let Some(indices) = header.salient_indices {
        dump = dump.with_salient_indices(indices)?;
    }
    Ok(dump)
}
