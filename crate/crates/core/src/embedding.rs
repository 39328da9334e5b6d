//! Binary tensor files holding precomputed embeddings.
//!
//! Layout, all little-endian: the magic `EWMB`, `u32` version (1), `u32`
//! rank, `rank` dimensions as `u64`, then `f32` data in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EWMB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("expected rank {expected}, found {found}")]
    WrongRank { expected: usize, found: usize },
    #[error("tensor of shape {dims:?} is too large")]
    TooLarge { dims: Vec<u64> },
    #[error("shape {dims:?} needs {expected} values, got {found}")]
    ShapeMismatch {
        dims: Vec<u64>,
        expected: usize,
        found: usize,
    },
    #[error("trailing bytes after tensor data")]
    Trailing,
    #[error("truncated tensor file: {0}")]
    Truncated(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EmbeddingError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A dense `f32` tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

fn element_count(dims: &[u64]) -> Option<usize> {
    dims.iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(*d))
        .and_then(|n| usize::try_from(n).ok())
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        let expected = element_count(&dims).ok_or_else(|| EmbeddingError::TooLarge { dims: dims.clone() })?;
        if expected != data.len() {
            return Err(EmbeddingError::ShapeMismatch {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn expect_rank(&self, rank: usize) -> Result<(), EmbeddingError> {
        if self.rank() == rank {
            Ok(())
        } else {
            Err(EmbeddingError::WrongRank {
                expected: rank,
                found: self.rank(),
            })
        }
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbeddingError::BadMagic(magic));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(EmbeddingError::BadVersion(version));
        }
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        let mut dword = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut dword)?;
            dims.push(u64::from_le_bytes(dword));
        }
        let Some(count) = element_count(&dims) else {
            return Err(EmbeddingError::TooLarge { dims });
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < count * 4 {
            return Err(EmbeddingError::ShapeMismatch {
                dims,
                expected: count,
                found: bytes.len() / 4,
            });
        }
        if bytes.len() > count * 4 {
            return Err(EmbeddingError::Trailing);
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file = std::fs::File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
        Tensor::read_from(std::io::BufReader::new(file)).map_err(|e| match e {
            EmbeddingError::Truncated(source) => EmbeddingError::io(path, source),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let file = std::fs::File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| EmbeddingError::io(path, e))
    }
}
