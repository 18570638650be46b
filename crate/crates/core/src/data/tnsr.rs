//! The `TNSR` binary tensor container.
//!
//! Layout: magic `TNSR`, version `u8 = 1`, dtype `u8` (1 = f32, 2 = f64),
//! ndim `u8`, a reserved zero byte, `ndim` little-endian `u32` dims, then
//! the row-major little-endian payload. A scalar has `ndim = 0` and one
//! payload element.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode(shape: &[usize], data: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::Format(format!("shape {shape:?} holds {expected} values, got {}", data.len())));
    }
    let ndim = u8::try_from(shape.len()).map_err(|_| Error::Format(format!("{} dims exceed 255", shape.len())))?;
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + dtype.width() * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dtype.code(), ndim, 0]);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>, Dtype)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let ndim = bytes[6] as usize;
    let header = 8 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let shape: Vec<usize> =
        bytes[8..header].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * dtype.width() {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * dtype.width()
        )));
    }
    let data = match dtype {
        Dtype::F32 => {
            payload.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect()
        }
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect(),
    };
    Ok((shape, data, dtype))
}

pub fn write(path: impl AsRef<Path>, shape: &[usize], data: &[f64], dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(shape, data, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, data, _) = decode(&bytes)?;
    Ok((shape, data))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    write(path, t.shape(), &t.data(), dtype)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let (shape, data) = read(path)?;
    if shape.is_empty() {
        return Ok(Tensor::scalar(data[0]));
    }
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_header_bytes() {
        let bytes = encode(&[2, 3], &[0.0; 6], Dtype::F32).unwrap();
        assert_eq!(
            &bytes[..16],
            &[0x54, 0x4E, 0x53, 0x52, 0x01, 0x01, 0x02, 0x00, 0x02, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00]
        );
        assert_eq!(bytes.len(), 16 + 24);
    }

    #[test]
    fn f64_roundtrip_is_bitwise() {
        let data = [0.1, -2.5e-300, f64::MAX, 1.0 / 3.0, -0.0, 7.0];
        let (shape, back, dtype) = decode(&encode(&[2, 3], &data, Dtype::F64).unwrap()).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(dtype, Dtype::F64);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scalar_has_no_dims() {
        let bytes = encode(&[], &[4.5], Dtype::F64).unwrap();
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes.len(), 8 + 8);
        let (shape, data, _) = decode(&bytes).unwrap();
        assert!(shape.is_empty());
        assert_eq!(data, vec![4.5]);
    }

    #[test]
    fn malformed_inputs() {
        let good = encode(&[2], &[1.0, 2.0], Dtype::F64).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Format(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode(&bad_version), Err(Error::Format(_))));
        let mut bad_dtype = good.clone();
        bad_dtype[5] = 9;
        assert!(matches!(decode(&bad_dtype), Err(Error::Format(_))));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(Error::Format(_))));
    }
}
