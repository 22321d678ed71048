//! The `CSYM` raw tensor file format.
//!
//! ```text
//! magic    4 bytes  "CSYM"
//! version  u32 LE   (currently 1)
//! rank     u32 LE
//! shape    rank × u32 LE
//! data     product(shape) × f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CSYM";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            field,
            detail: format!("file truncated at byte {offset}"),
        })
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => {
            return Err(Error::Format {
                field: "magic",
                detail: format!("expected \"CSYM\", found {m:?}"),
            })
        }
        None => {
            return Err(Error::Format {
                field: "magic",
                detail: "file shorter than the magic bytes".into(),
            })
        }
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let rank = read_u32(bytes, 8, "rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format {
            field: "rank",
            detail: format!("rank {rank} outside 1..=8"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = read_u32(bytes, 12 + 4 * i, "shape")? as usize;
        if d == 0 {
            return Err(Error::Format {
                field: "shape",
                detail: format!("axis {i} has zero extent"),
            });
        }
        shape.push(d);
    }
    let start = 12 + 4 * rank;
    let count: usize = shape.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 4 * count {
        return Err(Error::Format {
            field: "data",
            detail: format!(
                "shape {shape:?} needs {} payload bytes, found {}",
                4 * count,
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a tensor and checks its rank.
pub fn read_rank(path: impl AsRef<Path>, rank: usize) -> Result<Tensor<f32>> {
    let t = read(path)?;
    if t.rank() != rank {
        return Err(Error::Format {
            field: "rank",
            detail: format!("expected rank {rank}, found {}", t.rank()),
        });
    }
    Ok(t)
}
