//! Checkpoint container format.
//!
//! Layout: magic `VCGN`, version u32 LE, then a count-prefixed list of
//! named tensors (name length u32, UTF-8 name, rank u32, dims u32 each,
//! float32 payload LE), then a length-prefixed UTF-8 JSON blob carrying
//! config and RNG state. The reader preserves tensor order and raw
//! bytes, so serialize -> load -> serialize is byte-identical.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"VCGN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensorF32 {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensorF32 {
    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Raw checkpoint file contents: ordered tensors plus the metadata blob.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub tensors: Vec<NamedTensorF32>,
    pub meta_json: Vec<u8>,
}

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic { found: Vec<u8> },
    BadVersion { found: u32 },
    Truncated { at: &'static str },
    BadName,
    Oversized { what: &'static str, len: u64 },
    Meta(String),
    MissingTensor { name: String },
    Path(PathBuf),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "io error: {e}"),
            CheckpointError::BadMagic { found } => {
                write!(f, "bad checkpoint magic {found:?} (expected \"VCGN\")")
            }
            CheckpointError::BadVersion { found } => {
                write!(f, "unsupported checkpoint version {found}")
            }
            CheckpointError::Truncated { at } => write!(f, "checkpoint truncated at {at}"),
            CheckpointError::BadName => write!(f, "tensor name is not valid UTF-8"),
            CheckpointError::Oversized { what, len } => {
                write!(f, "unreasonable {what} length {len}")
            }
            CheckpointError::Meta(msg) => write!(f, "checkpoint metadata error: {msg}"),
            CheckpointError::MissingTensor { name } => {
                write!(f, "checkpoint is missing tensor {name:?}")
            }
            CheckpointError::Path(p) => write!(f, "cannot write checkpoint to {}", p.display()),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.meta_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.meta_json);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = cursor.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion { found: version });
        }
        let count = cursor.u32("tensor count")? as usize;
        if count > 1_000_000 {
            return Err(CheckpointError::Oversized {
                what: "tensor count",
                len: count as u64,
            });
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cursor.u32("name length")? as usize;
            if name_len > 4096 {
                return Err(CheckpointError::Oversized {
                    what: "tensor name",
                    len: name_len as u64,
                });
            }
            let name = String::from_utf8(cursor.take(name_len, "name")?.to_vec())
                .map_err(|_| CheckpointError::BadName)?;
            let rank = cursor.u32("rank")? as usize;
            if rank > 8 {
                return Err(CheckpointError::Oversized {
                    what: "tensor rank",
                    len: rank as u64,
                });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cursor.u32("dim")?);
            }
            let numel: usize = dims.iter().map(|&d| d as usize).product();
            if numel > 256 * 1024 * 1024 {
                return Err(CheckpointError::Oversized {
                    what: "tensor payload",
                    len: numel as u64,
                });
            }
            let raw = cursor.take(numel * 4, "tensor payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensorF32 { name, dims, data });
        }
        let blob_len = cursor.u32("metadata length")? as usize;
        let meta_json = cursor.take(blob_len, "metadata")?.to_vec();
        if cursor.pos != bytes.len() {
            return Err(CheckpointError::Truncated {
                at: "trailing bytes",
            });
        }
        Ok(CheckpointFile { tensors, meta_json })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        crate::corpus::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensorF32, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor {
                name: name.to_string(),
            })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, at: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { at });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, at: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, at)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
