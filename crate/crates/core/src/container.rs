//! Binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0  magic   4 bytes  "DPV2"
//! offset 4  version u16      currently 1
//! offset 6  dtype   u8       0 = 32-bit float
//! offset 7  rank    u8
//! offset 8  dims    rank x u32
//! then      payload numel x 4 bytes, row-major
//! ```
//!
//! The file length must equal header size + 4 * numel exactly; reads reject
//! trailing bytes, truncation, and non-finite payload elements.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{ImageTensor, Shape, Tensor, ValueRange};

pub const MAGIC: [u8; 4] = *b"DPV2";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {action} failed: {source}")]
    Io {
        path: PathBuf,
        action: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is {len} bytes, too short for the 8-byte fixed header (at byte offset {len})")]
    TruncatedHeader { path: PathBuf, len: usize },
    #[error("{path}: bad magic {found:?} at byte offset 0, expected {MAGIC:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported version {found} at byte offset 4, expected {VERSION}")]
    BadVersion { path: PathBuf, found: u16 },
    #[error("{path}: unsupported dtype code {found} at byte offset 6, expected {DTYPE_F32}")]
    BadDtype { path: PathBuf, found: u8 },
    #[error("{path}: rank 0 at byte offset 7, tensors need at least one dimension")]
    ZeroRank { path: PathBuf },
    #[error("{path}: dims table needs {expected} bytes at byte offset 8, file ends at {len}")]
    TruncatedDims {
        path: PathBuf,
        expected: usize,
        len: usize,
    },
    #[error("{path}: zero-sized dimension {index} at byte offset {offset}")]
    ZeroDim {
        path: PathBuf,
        index: usize,
        offset: usize,
    },
    #[error("{path}: dims {dims:?} overflow the addressable element count")]
    DimsOverflow { path: PathBuf, dims: Vec<u32> },
    #[error(
        "{path}: payload at byte offset {offset} has {actual} bytes, dims {dims:?} require {expected}"
    )]
    PayloadMismatch {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
        dims: Vec<u32>,
    },
    #[error("{path}: non-finite payload element at flat index {index} (byte offset {offset})")]
    NonFinite {
        path: PathBuf,
        index: usize,
        offset: usize,
    },
    #[error("{path}: rank {found} tensor where rank {expected} was required")]
    RankMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: dimension {index} is {value}, exceeding the u32 container limit")]
    DimTooLarge {
        path: PathBuf,
        index: usize,
        value: usize,
    },
    #[error("{path}: rank {rank} exceeds the container limit of 255")]
    RankTooLarge { path: PathBuf, rank: usize },
    #[error("{path}: payload of {actual} elements does not match dims {dims:?} ({expected})")]
    WriteLengthMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
        dims: Vec<u32>,
    },
    #[error("{path}: image tensor out of {range} range at flat index {index}: {source}")]
    Range {
        path: PathBuf,
        index: usize,
        range: ValueRange,
        #[source]
        source: crate::tensor::TensorError,
    },
}

fn io_err(path: &Path, action: &'static str, source: std::io::Error) -> ContainerError {
    ContainerError::Io {
        path: path.to_path_buf(),
        action,
        source,
    }
}

/// Write an arbitrary-rank tensor.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<(), ContainerError> {
    if dims.is_empty() {
        return Err(ContainerError::ZeroRank {
            path: path.to_path_buf(),
        });
    }
    if dims.len() > u8::MAX as usize {
        return Err(ContainerError::RankTooLarge {
            path: path.to_path_buf(),
            rank: dims.len(),
        });
    }
    let mut dims_u32 = Vec::with_capacity(dims.len());
    let mut numel: usize = 1;
    for (index, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(ContainerError::ZeroDim {
                path: path.to_path_buf(),
                index,
                offset: 8 + 4 * index,
            });
        }
        if d > u32::MAX as usize {
            return Err(ContainerError::DimTooLarge {
                path: path.to_path_buf(),
                index,
                value: d,
            });
        }
        dims_u32.push(d as u32);
        numel = numel.checked_mul(d).ok_or_else(|| ContainerError::DimsOverflow {
            path: path.to_path_buf(),
            dims: dims.iter().map(|&x| x as u32).collect(),
        })?;
    }
    if data.len() != numel {
        return Err(ContainerError::WriteLengthMismatch {
            path: path.to_path_buf(),
            expected: numel,
            actual: data.len(),
            dims: dims_u32,
        });
    }

    let mut buf = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(dims.len() as u8);
    for d in &dims_u32 {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(|e| io_err(path, "create", e))?;
    file.write_all(&buf).map_err(|e| io_err(path, "write", e))?;
    Ok(())
}

/// Read an arbitrary-rank tensor, validating the full header and length.
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>), ContainerError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, "read", e))?;
    let p = || path.to_path_buf();

    if bytes.len() < 8 {
        return Err(ContainerError::TruncatedHeader {
            path: p(),
            len: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ContainerError::BadMagic {
            path: p(),
            found: magic,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::BadVersion {
            path: p(),
            found: version,
        });
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(ContainerError::BadDtype {
            path: p(),
            found: dtype,
        });
    }
    let rank = bytes[7] as usize;
    if rank == 0 {
        return Err(ContainerError::ZeroRank { path: p() });
    }

    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(ContainerError::TruncatedDims {
            path: p(),
            expected: 4 * rank,
            len: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for index in 0..rank {
        let offset = 8 + 4 * index;
        let d = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if d == 0 {
            return Err(ContainerError::ZeroDim {
                path: p(),
                index,
                offset,
            });
        }
        numel = numel
            .checked_mul(d as usize)
            .ok_or_else(|| ContainerError::DimsOverflow {
                path: p(),
                dims: bytes[8..dims_end]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            })?;
        dims.push(d as usize);
    }

    let expected = numel * 4;
    let actual = bytes.len() - dims_end;
    if actual != expected {
        return Err(ContainerError::PayloadMismatch {
            path: p(),
            offset: dims_end,
            expected,
            actual,
            dims: dims.iter().map(|&d| d as u32).collect(),
        });
    }

    let mut data = Vec::with_capacity(numel);
    for (index, chunk) in bytes[dims_end..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(ContainerError::NonFinite {
                path: p(),
                index,
                offset: dims_end + 4 * index,
            });
        }
        data.push(v);
    }
    Ok((dims, data))
}

/// Read a rank-4 tensor as an unbounded buffer.
pub fn read_tensor4(path: &Path) -> Result<Tensor, ContainerError> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 4 {
        return Err(ContainerError::RankMismatch {
            path: path.to_path_buf(),
            expected: 4,
            found: dims.len(),
        });
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    Ok(Tensor::new(shape, data).expect("reader validated shape and finiteness"))
}

/// Write a rank-4 unbounded buffer.
pub fn write_tensor4(path: &Path, tensor: &Tensor) -> Result<(), ContainerError> {
    write_tensor(path, &tensor.shape().dims(), tensor.data())
}

/// Read a rank-4 tensor as an image batch. The container stores raw floats,
/// so the caller declares the range the file is expected to satisfy.
pub fn read_image(path: &Path, range: ValueRange) -> Result<ImageTensor, ContainerError> {
    let tensor = read_tensor4(path)?;
    ImageTensor::from_tensor(tensor, range).map_err(|source| {
        let index = match &source {
            crate::tensor::TensorError::OutOfRange { index, .. } => *index,
            _ => 0,
        };
        ContainerError::Range {
            path: path.to_path_buf(),
            index,
            range,
            source,
        }
    })
}

pub fn write_image(path: &Path, image: &ImageTensor) -> Result<(), ContainerError> {
    write_tensor(path, &image.shape().dims(), image.data())
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn arbitrary_round_trip(
            dims in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let numel: usize = dims.iter().product();
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.dpv2");
            write_tensor(&path, &dims, &data).unwrap();
            let (rd, rdata) = read_tensor(&path).unwrap();
            prop_assert_eq!(rd, dims);
            prop_assert_eq!(rdata, data);
        }
    }
}
