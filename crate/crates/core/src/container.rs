//! Binary tensor container shared by checkpoints, kNN models and window
//! blocks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes   e.g. "GSC1"
//! version     u32
//! fingerprint 32 bytes  sha256 of the producer's architecture string
//! count       u32
//! count x {
//!   name_len  u32
//!   name      UTF-8
//!   rank      u32
//!   dims      rank x u32
//!   values    prod(dims) x f64
//! }
//! metadata    UTF-8 JSON, the rest of the file
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::NTensor;

pub const VERSION: u32 = 1;

pub const MAGIC_CHECKPOINT: [u8; 4] = *b"GSC1";
pub const MAGIC_KNN: [u8; 4] = *b"GSK1";
pub const MAGIC_WINDOWS: [u8; 4] = *b"GSW1";
pub const MAGIC_FEATURES: [u8; 4] = *b"GSF1";

pub type Fingerprint = [u8; 32];

pub fn fingerprint(spec: &str) -> Fingerprint {
    Sha256::digest(spec.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub fingerprint: Fingerprint,
    pub tensors: Vec<(String, NTensor)>,
    pub metadata: serde_json::Value,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Container {
    pub fn new(magic: [u8; 4], fingerprint: Fingerprint) -> Self {
        Container {
            magic,
            fingerprint,
            tensors: Vec::new(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: NTensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&NTensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(self.metadata.to_string().as_bytes());
        out
    }

    /// Parse a container, insisting on `magic`.
    pub fn from_bytes(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let found = r.take(4)?;
        if found != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(found)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let fingerprint: Fingerprint = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Format(format!("tensor '{name}' shape {shape:?} too large")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, NTensor::new(shape, data)?));
        }
        let tail = &bytes[r.pos..];
        let metadata = if tail.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::from_slice(tail).map_err(|e| Error::Format(format!("metadata: {e}")))?
        };
        Ok(Container {
            magic,
            fingerprint,
            tensors,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: [u8; 4]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes, magic)
    }

    pub fn expect_fingerprint(&self, expected: &Fingerprint) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected: hex(expected),
                found: hex(&self.fingerprint),
            });
        }
        Ok(())
    }
}
