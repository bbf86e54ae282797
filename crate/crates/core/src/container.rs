//! Versioned binary container used for checkpoints and dataset caches.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic      8 bytes  "DECOLITE"
//! version    u32
//! kind_len   u32, kind bytes (utf-8)
//! header_len u64, header bytes (JSON)
//! n_arrays   u32
//! per array: len u64, then len f64 values (IEEE-754 bits, LE)
//! sha256     32 bytes over everything above
//! ```
//!
//! Floats are stored as raw bits, so a write/read round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DECOLITE";
pub const VERSION: u32 = 1;

pub fn encode<H: Serialize>(kind: &str, header: &H, arrays: &[&[f64]]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)
        .map_err(|e| Error::Format(format!("cannot encode {kind} header: {e}")))?;
    let mut buf = Vec::with_capacity(64 + header.len() + arrays.iter().map(|a| 8 + 8 * a.len()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    buf.extend_from_slice(kind.as_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a.iter() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("{} is truncated", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8], kind: &str) -> Result<(H, Vec<Vec<f64>>)> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("not a {kind} container (bad magic)")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format(format!("{kind} container checksum mismatch (corrupted file)")));
    }
    let mut r = Reader {
        buf: body,
        pos: 8,
        what: kind,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported {kind} container version {version}")));
    }
    let kind_len = r.u32()? as usize;
    let found = std::str::from_utf8(r.take(kind_len)?)
        .map_err(|_| Error::Format("container kind is not utf-8".into()))?;
    if found != kind {
        return Err(Error::Format(format!("expected a {kind} container, found {found}")));
    }
    let header_len = r.u64()? as usize;
    let header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Format(format!("bad {kind} header: {e}")))?;
    let n = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u64()? as usize;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        arrays.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        );
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("trailing bytes in {kind} container")));
    }
    Ok((header, arrays))
}

pub fn write<H: Serialize>(path: &Path, kind: &str, header: &H, arrays: &[&[f64]]) -> Result<()> {
    let bytes = encode(kind, header, arrays)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, kind).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
