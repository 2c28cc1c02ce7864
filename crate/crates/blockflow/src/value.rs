//! Element kinds and scalar values.
//!
//! Distributed arrays hold either signed 64-bit integers or 64-bit floats.
//! Element storage is dynamically typed so one runtime instance can drive
//! programs of either kind; kernels operate on [`Scalar`] values.

use crate::error::{Error, Result};

/// Element kind of a distributed array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dtype {
    I64,
    F64,
}

impl Dtype {
    /// Width of one element in bytes (used for transfer sizing).
    pub fn width(self) -> usize {
        8
    }

    pub fn zero(self) -> Scalar {
        match self {
            Dtype::I64 => Scalar::I64(0),
            Dtype::F64 => Scalar::F64(0.0),
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dtype::I64 => write!(f, "i64"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

/// One array element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    I64(i64),
    F64(f64),
}

impl Scalar {
    pub fn dtype(self) -> Dtype {
        match self {
            Scalar::I64(_) => Dtype::I64,
            Scalar::F64(_) => Dtype::F64,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Scalar::I64(v) => *v as f64,
            Scalar::F64(v) => *v,
        }
    }

    pub fn as_i64(&self) -> i64 {
        match self {
            Scalar::I64(v) => *v,
            Scalar::F64(v) => *v as i64,
        }
    }
}

impl std::fmt::Display for Scalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scalar::I64(v) => write!(f, "{v}"),
            Scalar::F64(v) => write!(f, "{v}"),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::I64(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::F64(v)
    }
}

/// Flat row-major element buffer backing one block (base-block or staging
/// buffer). Owned by exactly one simulated rank.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    I64(Vec<i64>),
    F64(Vec<f64>),
}

impl BlockData {
    pub fn zeroed(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::I64 => BlockData::I64(vec![0; len]),
            Dtype::F64 => BlockData::F64(vec![0.0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlockData::I64(v) => v.len(),
            BlockData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            BlockData::I64(_) => Dtype::I64,
            BlockData::F64(_) => Dtype::F64,
        }
    }

    pub fn get(&self, idx: usize) -> Scalar {
        match self {
            BlockData::I64(v) => Scalar::I64(v[idx]),
            BlockData::F64(v) => Scalar::F64(v[idx]),
        }
    }

    pub fn set(&mut self, idx: usize, value: Scalar) {
        match (self, value) {
            (BlockData::I64(v), Scalar::I64(x)) => v[idx] = x,
            (BlockData::F64(v), Scalar::F64(x)) => v[idx] = x,
            (buf, val) => panic!(
                "dtype mismatch writing {:?} into {:?} buffer",
                val.dtype(),
                buf.dtype()
            ),
        }
    }
}

/// Serialize scalars into row-major little-endian bytes for a transfer
/// payload. The payload size is element count times the dtype width.
pub fn encode_payload(values: &[Scalar]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        match v {
            Scalar::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
            Scalar::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    out
}

/// Inverse of [`encode_payload`].
pub fn decode_payload(dtype: Dtype, bytes: &[u8]) -> Result<Vec<Scalar>> {
    if bytes.len() % dtype.width() != 0 {
        return Err(Error::invalid(format!(
            "payload of {} bytes is not a multiple of the {} element width",
            bytes.len(),
            dtype
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / 8);
    for chunk in bytes.chunks_exact(8) {
        let raw: [u8; 8] = chunk.try_into().unwrap();
        out.push(match dtype {
            Dtype::I64 => Scalar::I64(i64::from_le_bytes(raw)),
            Dtype::F64 => Scalar::F64(f64::from_le_bytes(raw)),
        });
    }
    Ok(out)
}
