//! Binary tensor container shared by corpus files, masks and checkpoints.
//!
//! Layout: magic `PRT1`, one dtype byte, one rank byte, `rank` little-endian
//! `u32` dimensions, then the little-endian payload in row-major order.
//!
//! Dtype codes 0 (f32) and 1 (complex64, interleaved re/im) are the portable
//! interchange types. Codes 2 (f64) and 3 (complex128) carry full-precision
//! checkpoints so a reloaded network reproduces its outputs bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    Complex64 = 1,
    F64 = 2,
    Complex128 = 3,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::Complex64),
            2 => Ok(DType::F64),
            3 => Ok(DType::Complex128),
            other => Err(Error::Container(format!("unknown dtype code {other}"))),
        }
    }

    fn scalar_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::Complex64 | DType::F64 => 8,
            DType::Complex128 => 16,
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, DType::Complex64 | DType::Complex128)
    }
}

/// Payload held in memory at full precision regardless of the on-disk dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Tensor {
    pub fn real(dims: Vec<usize>, data: Vec<f64>, dtype: DType) -> Result<Self> {
        if dtype.is_complex() {
            return Err(Error::Container("real payload with complex dtype".into()));
        }
        check_len(&dims, data.len())?;
        Ok(Tensor {
            dtype,
            dims,
            payload: Payload::Real(data),
        })
    }

    pub fn complex(dims: Vec<usize>, data: Vec<Complex64>, dtype: DType) -> Result<Self> {
        if !dtype.is_complex() {
            return Err(Error::Container("complex payload with real dtype".into()));
        }
        check_len(&dims, data.len())?;
        Ok(Tensor {
            dtype,
            dims,
            payload: Payload::Complex(data),
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self.payload {
            Payload::Real(v) => Ok(v),
            Payload::Complex(_) => Err(Error::Container("expected a real tensor".into())),
        }
    }

    pub fn into_complex(self) -> Result<Vec<Complex64>> {
        match self.payload {
            Payload::Complex(v) => Ok(v),
            Payload::Real(v) => Ok(v.into_iter().map(|r| Complex64::new(r, 0.0)).collect()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + self.len() * self.dtype.scalar_bytes());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match (&self.payload, self.dtype) {
            (Payload::Real(v), DType::F32) => {
                v.iter().for_each(|x| out.extend_from_slice(&(*x as f32).to_le_bytes()))
            }
            (Payload::Real(v), DType::F64) => {
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()))
            }
            (Payload::Complex(v), DType::Complex64) => v.iter().for_each(|c| {
                out.extend_from_slice(&(c.re as f32).to_le_bytes());
                out.extend_from_slice(&(c.im as f32).to_le_bytes());
            }),
            (Payload::Complex(v), DType::Complex128) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            _ => unreachable!("payload kind is validated at construction"),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let dtype = DType::from_code(bytes[4])?;
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::Container("truncated header".into()));
        }
        let dims: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let body = &bytes[header..];
        if body.len() != n * dtype.scalar_bytes() {
            return Err(Error::Container(format!(
                "payload is {} bytes, expected {}",
                body.len(),
                n * dtype.scalar_bytes()
            )));
        }
        let f32_at = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        let f64_at = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let payload = match dtype {
            DType::F32 => Payload::Real(body.chunks_exact(4).map(f32_at).collect()),
            DType::F64 => Payload::Real(body.chunks_exact(8).map(f64_at).collect()),
            DType::Complex64 => Payload::Complex(
                body.chunks_exact(8)
                    .map(|c| Complex64::new(f32_at(&c[..4]), f32_at(&c[4..])))
                    .collect(),
            ),
            DType::Complex128 => Payload::Complex(
                body.chunks_exact(16)
                    .map(|c| Complex64::new(f64_at(&c[..8]), f64_at(&c[8..])))
                    .collect(),
            ),
        };
        Ok(Tensor {
            dtype,
            dims,
            payload,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    if dims.len() > u8::MAX as usize {
        return Err(Error::Container("rank exceeds 255".into()));
    }
    let n: usize = dims.iter().product();
    if n != len {
        return Err(Error::Container(format!("dims imply {n} elements, payload has {len}")));
    }
    Ok(())
}
