//! `PSVT` tensor files.
//!
//! ```text
//! offset  size  content
//! 0       4     b"PSVT"
//! 4       8     header length H, u64 little-endian
//! 12      H     UTF-8 JSON {"dtype":"f64"|"u32","shape":[..],"order":"row-major"}
//! 12+H    ..    product(shape) values, little-endian, row-major
//! ```
//!
//! Every dimension must be positive. Nothing may follow the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSVT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    U32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::U32 => "u32",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Dtype::F64),
            "u32" => Ok(Dtype::U32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F64(_) => Dtype::F64,
            TensorData::U32(_) => Dtype::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense row-major array.
///
/// `PartialEq` compares floats by value; use [`Tensor::bit_eq`] for bitwise
/// identity (NaN payloads, signed zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<u64>,
    order: String,
}

fn check_shape(shape: &[u64]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::DegenerateShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| usize::try_from(d).ok().and_then(|d| acc.checked_mul(d)))
        .ok_or_else(|| Error::InvalidHeader(format!("shape {shape:?} overflows")))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
        let n = check_shape(&dims)?;
        if n != data.len() {
            return Err(Error::TensorMismatch {
                what: "element count",
                expected: n.to_string(),
                found: data.len().to_string(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(values))
    }

    pub fn from_u32(shape: Vec<usize>, values: Vec<u32>) -> Result<Self> {
        Self::new(shape, TensorData::U32(values))
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && match (&self.data, &other.data) {
                (TensorData::F64(a), TensorData::F64(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                (TensorData::U32(a), TensorData::U32(b)) => a == b,
                _ => false,
            }
    }

    fn check_shape_is(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::TensorMismatch {
                what: "shape",
                expected: format!("{expected:?}"),
                found: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }

    /// The f64 payload, checking dtype and shape.
    pub fn into_f64(self, expected: &[usize]) -> Result<Vec<f64>> {
        self.check_shape_is(expected)?;
        match self.data {
            TensorData::F64(v) => Ok(v),
            other => Err(Error::TensorMismatch { what: "dtype", expected: "f64".into(), found: other.dtype().name().into() }),
        }
    }

    /// The u32 payload, checking dtype and shape.
    pub fn into_u32(self, expected: &[usize]) -> Result<Vec<u32>> {
        self.check_shape_is(expected)?;
        match self.data {
            TensorData::U32(v) => Ok(v),
            other => Err(Error::TensorMismatch { what: "dtype", expected: "u32".into(), found: other.dtype().name().into() }),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dims: Vec<u64> = self.shape.iter().map(|&d| d as u64).collect();
        let n = check_shape(&dims)?;
        if n != self.data.len() {
            return Err(Error::TensorMismatch {
                what: "element count",
                expected: n.to_string(),
                found: self.data.len().to_string(),
            });
        }
        let header = Header { dtype: self.dtype().name().into(), shape: dims, order: "row-major".into() };
        let header = serde_json::to_vec(&header).map_err(|e| Error::json("tensor header", e))?;
        let mut out = Vec::with_capacity(12 + header.len() + n * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    /// Parses a tensor file image. Total: any input yields a tensor or a
    /// structured error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            if MAGIC.starts_with(bytes) {
                return Err(Error::Truncated { what: "magic", needed: 4, found: bytes.len() as u64 });
            }
            return Err(Error::BadMagic);
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let rest = &bytes[4..];
        let Some(len_bytes) = rest.get(..8) else {
            return Err(Error::Truncated { what: "header length", needed: 8, found: rest.len() as u64 });
        };
        let header_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
        let rest = &rest[8..];
        if header_len > rest.len() as u64 {
            return Err(Error::Truncated { what: "header", needed: header_len, found: rest.len() as u64 });
        }
        let (header, payload) = rest.split_at(header_len as usize);
        let text = std::str::from_utf8(header).map_err(|e| Error::InvalidHeader(e.to_string()))?;
        let header: Header = serde_json::from_str(text).map_err(|e| Error::InvalidHeader(e.to_string()))?;
        if header.order != "row-major" {
            return Err(Error::InvalidHeader(format!("unsupported order {:?}", header.order)));
        }
        let dtype = Dtype::parse(&header.dtype)?;
        let n = check_shape(&header.shape)?;
        let needed = n
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::InvalidHeader(format!("shape {:?} overflows", header.shape)))?;
        if payload.len() < needed {
            return Err(Error::Truncated { what: "payload", needed: needed as u64, found: payload.len() as u64 });
        }
        if payload.len() > needed {
            return Err(Error::TrailingBytes((payload.len() - needed) as u64));
        }
        let data = match dtype {
            Dtype::F64 => TensorData::F64(
                payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            ),
            Dtype::U32 => TensorData::U32(
                payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            ),
        };
        let shape = header.shape.iter().map(|&d| d as usize).collect();
        Ok(Self { shape, data })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &tensor.encode()?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::decode(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_layout() {
        let t = Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = t.encode().unwrap();
        assert_eq!(&bytes[..4], b"PSVT");
        let h = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        assert_eq!(&bytes[12..12 + h], br#"{"dtype":"f64","shape":[2,2],"order":"row-major"}"#);
        assert_eq!(bytes.len(), 12 + h + 32);
        assert_eq!(&bytes[12 + h + 8..12 + h + 16], &2.0f64.to_le_bytes());
        assert!(Tensor::decode(&bytes).unwrap().bit_eq(&t));
    }

    #[test]
    fn degenerate_shapes() {
        assert!(matches!(Tensor::from_f64(vec![0], vec![]), Err(Error::DegenerateShape(_))));
        assert!(matches!(Tensor::from_f64(vec![], vec![1.0]), Err(Error::DegenerateShape(_))));
        assert!(matches!(Tensor::from_u32(vec![3], vec![1]), Err(Error::TensorMismatch { .. })));
    }

    #[test]
    fn distinct_corruption_errors() {
        let good = Tensor::from_u32(vec![3], vec![7, 8, 9]).unwrap().encode().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::decode(&bad), Err(Error::BadMagic)));
        assert!(matches!(Tensor::decode(&good[..good.len() - 1]), Err(Error::Truncated { what: "payload", .. })));
        assert!(matches!(Tensor::decode(&good[..6]), Err(Error::Truncated { what: "header length", .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(Tensor::decode(&long), Err(Error::TrailingBytes(1))));
        let text = String::from_utf8_lossy(&good).replace("u32", "i16");
        assert!(matches!(Tensor::decode(text.as_bytes()), Err(Error::UnknownDtype(d)) if d == "i16"));
    }
}
