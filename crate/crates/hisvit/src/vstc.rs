//! The VSTC tensor container.
//!
//! Layout: `b"VSTC"`, version byte, dtype byte (1 = binary32, 2 = binary64,
//! 3 = uint8), rank byte, one little-endian `u32` per extent, then the
//! row-major little-endian payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hisvit_core::tensor::MAX_RANK;
use hisvit_core::Tensor;

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 4] = *b"VSTC";
pub const VERSION: u8 = 1;

/// Upper bound on decoded element count, against corrupt headers.
pub const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl Dtype {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            3 => Ok(Dtype::U8),
            other => Err(HarnessError::Format(format!("unknown VSTC dtype {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

/// Encodes `t`. Narrower dtypes must represent every value exactly.
pub fn write_tensor<W: Write>(mut w: W, t: &Tensor, dtype: Dtype) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(HarnessError::Format("rank does not fit in a byte".into()));
    }
    let mut head = Vec::with_capacity(7 + 4 * t.rank());
    head.extend_from_slice(&MAGIC);
    head.extend_from_slice(&[VERSION, dtype as u8, t.rank() as u8]);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| HarnessError::Format(format!("extent {d} exceeds u32")))?;
        head.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&head)?;
    let mut body = Vec::with_capacity(t.len() * dtype.width());
    for (i, &v) in t.data().iter().enumerate() {
        match dtype {
            Dtype::F64 => body.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => {
                let n = v as f32;
                if f64::from(n).to_bits() != v.to_bits() {
                    return Err(HarnessError::Format(format!("value {v} at {i} is not exact in binary32")));
                }
                body.extend_from_slice(&n.to_le_bytes());
            }
            Dtype::U8 => {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(HarnessError::Format(format!("value {v} at {i} is not a byte")));
                }
                body.push(v as u8);
            }
        }
    }
    w.write_all(&body)?;
    Ok(())
}

/// Decodes one tensor, widening the payload to binary64.
pub fn read_tensor<R: Read>(mut r: R) -> Result<(Tensor, Dtype)> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if head[..4] != MAGIC {
        return Err(HarnessError::Format("missing VSTC magic".into()));
    }
    if head[4] != VERSION {
        return Err(HarnessError::Format(format!("unsupported VSTC version {}", head[4])));
    }
    let dtype = Dtype::from_byte(head[5])?;
    let rank = head[6] as usize;
    if rank > MAX_RANK {
        return Err(HarnessError::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| HarnessError::Format(format!("extents {dims:?} are too large")))?;
    let mut body = vec![0u8; n * dtype.width()];
    r.read_exact(&mut body)?;
    let data: Vec<f64> = match dtype {
        Dtype::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::U8 => body.iter().map(|&b| f64::from(b)).collect(),
    };
    Ok((Tensor::new(&dims, data)?, dtype))
}

pub fn save(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let (t, _) = read_tensor(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(HarnessError::Format("trailing bytes after tensor".into()));
    }
    Ok(t)
}
