//! Binary tensor container used for every persisted or exchanged volume.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "VRTC"      4 bytes
//! version u8          always 1
//! dtype   u8          0 = u8, 1 = f32
//! ndim    u8
//! dims    ndim x u32
//! payload row-major, last listed dim innermost
//! ```
//!
//! Videos are stored as `(T, H, W, C)` u8, masks as `(T, H, W)` u8 and noise
//! as `(T, C, h, w)` f32.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VRTC";
pub const VERSION: u8 = 1;

const HEADER_FIXED: usize = 7;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad container magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("container truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("element count overflows for dims {0:?}")]
    DimOverflow(Vec<u32>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dtype mismatch: expected {expected:?}, found {found:?}")]
    Dtype { expected: DType, found: DType },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, ContainerError> {
        match tag {
            0 => Ok(DType::U8),
            1 => Ok(DType::F32),
            other => Err(ContainerError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::U8(_) => DType::U8,
            Payload::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::U8(v) => v.len(),
            Payload::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense tensor with its dims, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    dims: Vec<u32>,
    payload: Payload,
}

fn element_count(dims: &[u32]) -> Result<usize, ContainerError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| ContainerError::DimOverflow(dims.to_vec()))
}

impl Container {
    pub fn new(dims: Vec<u32>, payload: Payload) -> Result<Self, ContainerError> {
        if dims.len() > u8::MAX as usize {
            return Err(ContainerError::Shape(format!(
                "{} dims exceed u8",
                dims.len()
            )));
        }
        let count = element_count(&dims)?;
        if count != payload.len() {
            return Err(ContainerError::Shape(format!(
                "dims {dims:?} hold {count} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(Self { dims, payload })
    }

    pub fn u8(dims: Vec<u32>, data: Vec<u8>) -> Result<Self, ContainerError> {
        Self::new(dims, Payload::U8(data))
    }

    pub fn f32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, ContainerError> {
        Self::new(dims, Payload::F32(data))
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.payload.dtype()
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_parts(self) -> (Vec<u32>, Payload) {
        (self.dims, self.payload)
    }

    /// Consumes the container, requiring u8 data with `ndim` dims.
    pub fn expect_u8(self, ndim: usize) -> Result<(Vec<usize>, Vec<u8>), ContainerError> {
        self.check_ndim(ndim)?;
        let dims = self.dims.iter().map(|&d| d as usize).collect();
        match self.payload {
            Payload::U8(v) => Ok((dims, v)),
            Payload::F32(_) => Err(ContainerError::Dtype {
                expected: DType::U8,
                found: DType::F32,
            }),
        }
    }

    /// Consumes the container, requiring f32 data with `ndim` dims.
    pub fn expect_f32(self, ndim: usize) -> Result<(Vec<usize>, Vec<f32>), ContainerError> {
        self.check_ndim(ndim)?;
        let dims = self.dims.iter().map(|&d| d as usize).collect();
        match self.payload {
            Payload::F32(v) => Ok((dims, v)),
            Payload::U8(_) => Err(ContainerError::Dtype {
                expected: DType::F32,
                found: DType::U8,
            }),
        }
    }

    fn check_ndim(&self, ndim: usize) -> Result<(), ContainerError> {
        if self.dims.len() != ndim {
            return Err(ContainerError::Shape(format!(
                "expected {ndim} dims, found {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED + 4 * self.dims.len() + self.payload.len() * self.dtype().size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype().tag());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ContainerError> {
        let need = |needed: usize| -> Result<(), ContainerError> {
            if bytes.len() < needed {
                Err(ContainerError::Truncated {
                    needed,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        need(HEADER_FIXED)?;
        if bytes[4] != VERSION {
            return Err(ContainerError::UnsupportedVersion(bytes[4]));
        }
        let dtype = DType::from_tag(bytes[5])?;
        let ndim = bytes[6] as usize;
        let header = HEADER_FIXED + 4 * ndim;
        need(header)?;
        let dims: Vec<u32> = bytes[HEADER_FIXED..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = element_count(&dims)?;
        let payload_len = count
            .checked_mul(dtype.size())
            .ok_or_else(|| ContainerError::DimOverflow(dims.clone()))?;
        need(header + payload_len)?;
        let extra = bytes.len() - header - payload_len;
        if extra != 0 {
            return Err(ContainerError::TrailingBytes(extra));
        }
        let raw = &bytes[header..];
        let payload = match dtype {
            DType::U8 => Payload::U8(raw.to_vec()),
            DType::F32 => Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(Self { dims, payload })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::decode(&fs::read(path)?)
    }
}
