//! GZT1 binary tensor container.
//!
//! Wire layout: magic `GZT1`; one dtype byte (0 = f32, 1 = f64); one ndim
//! byte; ndim little-endian u32 extents; row-major little-endian payload.

use std::fs;
use std::path::Path;

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GZT1";

/// A decoded tensor of either supported dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + T::WIDTH * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes_vec());
    }
    out
}

/// Decode a GZT1 byte stream, returning the tensor and the number of bytes
/// consumed. Errors carry the offending byte offset.
pub fn decode(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    if bytes.len() < 4 {
        return Err(Error::corrupt(bytes.len(), "truncated before magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::corrupt(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < 6 {
        return Err(Error::corrupt(bytes.len(), "truncated header"));
    }
    let dtype = bytes[4];
    let ndim = bytes[5] as usize;
    let mut off = 6;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        if off + 4 > bytes.len() {
            return Err(Error::corrupt(off, "truncated shape"));
        }
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        shape.push(d);
        off += 4;
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::corrupt(6, format!("shape {shape:?} overflows")))?;
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::corrupt(4, format!("unknown dtype code {other}"))),
    };
    let payload = numel
        .checked_mul(width)
        .ok_or_else(|| Error::corrupt(6, format!("payload for shape {shape:?} overflows")))?;
    if bytes.len() < off + payload {
        return Err(Error::corrupt(
            bytes.len(),
            format!("payload truncated, need {} bytes from offset {off}", payload),
        ));
    }
    let body = &bytes[off..off + payload];
    let tensor = match dtype {
        0 => {
            let data = body.chunks_exact(4).map(f32::from_le_slice).collect();
            AnyTensor::F32(Tensor::new(shape, data).map_err(|e| Error::corrupt(6, e.to_string()))?)
        }
        _ => {
            let data = body.chunks_exact(8).map(f64::from_le_slice).collect();
            AnyTensor::F64(Tensor::new(shape, data).map_err(|e| Error::corrupt(6, e.to_string()))?)
        }
    };
    Ok((tensor, off + payload))
}

pub fn decode_f32(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    match decode(bytes)? {
        (AnyTensor::F32(t), n) => Ok((t, n)),
        (AnyTensor::F64(_), _) => Err(Error::corrupt(4, "expected f32 tensor, found f64")),
    }
}

pub fn write_file<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_file_f32(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode_f32(&bytes)
        .map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
    if used != bytes.len() {
        return Err(Error::data(
            path.display().to_string(),
            format!("{} trailing bytes after tensor", bytes.len() - used),
        ));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_and_f64() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32 * 0.5 - 3.0);
        let bytes = encode(&t);
        let (back, used) = decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, AnyTensor::F32(t));

        let t = Tensor::<f64>::from_fn(&[5], |i| (i as f64).sin());
        let bytes = encode(&t);
        let (back, _) = decode(&bytes).unwrap();
        assert_eq!(back, AnyTensor::F64(t));
    }

    #[test]
    fn header_is_exactly_as_specified() {
        let t = Tensor::<f32>::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"GZT1");
        assert_eq!(bytes[4], 0); // f32
        assert_eq!(bytes[5], 2); // ndim
        assert_eq!(&bytes[6..10], &1u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 8);
    }

    #[test]
    fn corrupt_inputs_carry_offsets() {
        let t = Tensor::<f32>::from_fn(&[3], |i| i as f32);
        let mut bytes = encode(&t);

        let err = decode(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");

        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");

        let err = decode(&[]).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }));
    }

    #[test]
    fn absurd_shape_rejected_without_allocation() {
        // ndim=2 with extents u32::MAX x u32::MAX must not try to allocate
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.push(0);
        bytes.push(2);
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
