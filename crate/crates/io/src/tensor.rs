//! `JGAT` binary tensor container.
//!
//! Layout (little-endian): the magic `JGAT`, a `u32` rank, `rank` `u64`
//! dimensions, then the row-major `f32` payload. Nothing may follow the
//! payload.

use std::path::Path;

use jga_core::{LatentGrid, SparseVoxelTensor};
use serde::{Deserialize, Serialize};

use crate::config::{parse_json, to_json_pretty};
use crate::{read_file, write_file, IoError, Reader};

pub const MAGIC: &[u8; 4] = b"JGAT";
pub const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, IoError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(IoError::Malformed {
                what: "tensor",
                offset: 0,
                message: format!("dims {dims:?} need {n} values, got {}", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self, IoError> {
        Self::new(dims, data.iter().map(|v| *v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_tensor(bytes: &[u8]) -> Result<Tensor, IoError> {
    let mut r = Reader::new(bytes, "tensor");
    if r.take(4)? != MAGIC {
        return Err(IoError::Malformed {
            what: "tensor",
            offset: 0,
            message: "missing JGAT magic".into(),
        });
    }
    let rank_at = r.pos();
    let rank = r.u32()?;
    if rank > MAX_RANK {
        return Err(IoError::Malformed {
            what: "tensor",
            offset: rank_at,
            message: format!("rank {rank} exceeds {MAX_RANK}"),
        });
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut count: u64 = 1;
    for _ in 0..rank {
        let at = r.pos();
        let d = r.u64()?;
        count = count.checked_mul(d).ok_or_else(|| IoError::Malformed {
            what: "tensor",
            offset: at,
            message: "element count overflows".into(),
        })?;
        dims.push(d);
    }
    let needed = count.checked_mul(4).ok_or_else(|| IoError::Malformed {
        what: "tensor",
        offset: r.pos(),
        message: "payload size overflows".into(),
    })?;
    // check before allocating so hostile headers cannot request huge buffers
    if needed > r.remaining() as u64 {
        return Err(IoError::Truncated {
            what: "tensor",
            offset: r.pos(),
            needed,
            available: r.remaining(),
        });
    }
    let payload = r.take(needed as usize)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor {
        dims: dims.into_iter().map(|d| d as usize).collect(),
        data,
    })
}

pub fn read_tensor(path: &Path) -> Result<Tensor, IoError> {
    parse_tensor(&read_file(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), IoError> {
    write_file(path, &encode_tensor(t))
}

/// Latent grids are stored as `[r, r, r, F + 1]` with occupancy last.
pub fn latent_to_tensor(grid: &LatentGrid) -> Tensor {
    let r = grid.resolution;
    Tensor::from_f64(vec![r, r, r, grid.channels + 1], &grid.to_state()).expect("consistent latent grid")
}

pub fn latent_from_tensor(t: &Tensor) -> Result<LatentGrid, IoError> {
    let shape_err = || IoError::Malformed {
        what: "latent tensor",
        offset: 8,
        message: format!("expected dims [r, r, r, F+1], got {:?}", t.dims),
    };
    let [r0, r1, r2, c] = t.dims[..] else {
        return Err(shape_err());
    };
    if r0 != r1 || r1 != r2 || c == 0 {
        return Err(shape_err());
    }
    Ok(LatentGrid::from_state(r0, c - 1, &t.to_f64())?)
}

pub fn read_latent(path: &Path) -> Result<LatentGrid, IoError> {
    latent_from_tensor(&read_tensor(path)?)
}

pub fn write_latent(path: &Path, grid: &LatentGrid) -> Result<(), IoError> {
    write_tensor(path, &latent_to_tensor(grid))
}

/// Grid metadata stored beside a sparse tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseMeta {
    pub resolution: usize,
    pub stride: usize,
    pub channels: usize,
}

/// Rows of `[i, j, k, features...]`; coordinates are exact in `f32`.
pub fn sparse_to_tensor(t: &SparseVoxelTensor) -> Tensor {
    let c = t.channels();
    let mut data = Vec::with_capacity(t.len() * (3 + c));
    for (i, coord) in t.coords().iter().enumerate() {
        data.extend(coord.iter().map(|v| *v as f32));
        data.extend(t.row(i).iter().map(|v| *v as f32));
    }
    Tensor::new(vec![t.len(), 3 + c], data).expect("consistent sparse tensor")
}

pub fn sparse_from_tensor(t: &Tensor, meta: SparseMeta) -> Result<SparseVoxelTensor, IoError> {
    if t.dims.len() != 2 || t.dims[1] != 3 + meta.channels {
        return Err(IoError::Malformed {
            what: "sparse tensor",
            offset: 8,
            message: format!("expected dims [n, {}], got {:?}", 3 + meta.channels, t.dims),
        });
    }
    let mut coords = Vec::with_capacity(t.dims[0]);
    let mut features = Vec::with_capacity(t.dims[0] * meta.channels);
    for row in t.data.chunks_exact(3 + meta.channels) {
        if row[..3].iter().any(|v| v.fract() != 0.0 || v.abs() > i32::MAX as f32) {
            return Err(IoError::Malformed {
                what: "sparse tensor",
                offset: 8,
                message: "coordinates must be integers".into(),
            });
        }
        coords.push([row[0] as i32, row[1] as i32, row[2] as i32]);
        features.extend(row[3..].iter().map(|v| *v as f64));
    }
    Ok(SparseVoxelTensor::new(
        meta.resolution,
        meta.stride,
        meta.channels,
        coords,
        features,
    )?)
}

/// Writes the tensor and a `.json` sidecar with its grid metadata.
pub fn write_sparse(path: &Path, t: &SparseVoxelTensor) -> Result<(), IoError> {
    write_tensor(path, &sparse_to_tensor(t))?;
    let meta = SparseMeta {
        resolution: t.resolution(),
        stride: t.stride(),
        channels: t.channels(),
    };
    write_file(&path.with_extension("json"), &to_json_pretty(&meta))
}

pub fn read_sparse(path: &Path) -> Result<SparseVoxelTensor, IoError> {
    let side = path.with_extension("json");
    let meta: SparseMeta = parse_json(&read_file(&side)?, &side.display().to_string())?;
    sparse_from_tensor(&read_tensor(path)?, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-8, f32::MAX]).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(&bytes[..4], b"JGAT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 16 + 24);
        assert_eq!(parse_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn truncation_reports_needed_bytes() {
        let t = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
        let bytes = encode_tensor(&t);
        match parse_tensor(&bytes[..bytes.len() - 3]) {
            Err(IoError::Truncated {
                needed,
                available,
                offset,
                ..
            }) => {
                assert_eq!((needed, available, offset), (16, 13, 16));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn huge_dims_fail_without_allocating() {
        let mut bytes = b"JGAT".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(u64::MAX.to_le_bytes());
        bytes.extend(3u64.to_le_bytes());
        assert!(parse_tensor(&bytes).is_err());
        let mut bytes = b"JGAT".to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend((1u64 << 40).to_le_bytes());
        assert!(matches!(parse_tensor(&bytes), Err(IoError::Truncated { .. })));
    }
}
