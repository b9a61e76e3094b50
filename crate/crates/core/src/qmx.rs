//! The `.qmx` dense matrix file format.
//!
//! A file is a single line of JSON, `{"rows":R,"cols":C,"dtype":"f64","order":"row-major"}`,
//! terminated by `\n`, followed by `R * C` little-endian IEEE-754 values in row-major
//! order. `dtype` is `"f64"` or `"f32"`; values are always handled as `f64` in memory.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Dtype::F64),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::invalid(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmxHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub order: String,
}

const ROW_MAJOR: &str = "row-major";

/// Serializes `m` into the file layout. `f32` output rounds each value to nearest.
pub fn encode(m: ArrayView2<'_, f64>, dtype: Dtype) -> Vec<u8> {
    let header = QmxHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype,
        order: ROW_MAJOR.to_string(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(m.len() * dtype.size());
    for &v in m.iter() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

/// Parses the file layout; `source` only labels error messages.
pub fn decode(bytes: &[u8], source: &str) -> Result<(Array2<f64>, Dtype)> {
    let format = |reason: String| Error::Format {
        path: source.to_string(),
        reason,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format("missing header line".into()))?;
    let header: QmxHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| format(format!("bad header: {e}")))?;
    if header.order != ROW_MAJOR {
        return Err(format(format!("unsupported order `{}`", header.order)));
    }
    let payload = &bytes[newline + 1..];
    let count = header
        .rows
        .checked_mul(header.cols)
        .ok_or_else(|| format("dimensions overflow".into()))?;
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(format(format!(
            "{}x{} {:?} needs {expected} payload bytes, found {}",
            header.rows,
            header.cols,
            header.dtype,
            payload.len()
        )));
    }
    let values: Vec<f64> = match header.dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
    };
    let m = Array2::from_shape_vec((header.rows, header.cols), values).expect("length checked");
    Ok((m, header.dtype))
}

pub fn write_qmx(path: impl AsRef<Path>, m: ArrayView2<'_, f64>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m, dtype)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_qmx(path: impl AsRef<Path>) -> Result<(Array2<f64>, Dtype)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_layout() {
        let bytes = encode(array![[1.0, 2.0]].view(), Dtype::F64);
        let text = std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).unwrap();
        assert_eq!(text, r#"{"rows":1,"cols":2,"dtype":"f64","order":"row-major"}"#);
        assert_eq!(bytes.len(), text.len() + 1 + 16);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = array![[0.1, -0.0, f64::MIN_POSITIVE], [1e300, -3.5, f64::NAN]];
        let (back, dtype) = decode(&encode(m.view(), Dtype::F64), "mem").unwrap();
        assert_eq!(dtype, Dtype::F64);
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let m32 = array![[0.5f32 as f64, 0.1f32 as f64, -7.25]];
        let (back, dtype) = decode(&encode(m32.view(), Dtype::F32), "mem").unwrap();
        assert_eq!(dtype, Dtype::F32);
        for (a, b) in m32.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_matrix() {
        let m = Array2::<f64>::zeros((0, 3));
        let (back, _) = decode(&encode(m.view(), Dtype::F64), "mem").unwrap();
        assert_eq!(back.dim(), (0, 3));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let mut bytes = encode(array![[1.0, 2.0]].view(), Dtype::F64);
        bytes.pop();
        assert!(matches!(decode(&bytes, "x"), Err(Error::Format { .. })));
        assert!(decode(b"no header", "x").is_err());
        assert!(decode(b"{\"rows\":1,\"cols\":1,\"dtype\":\"f16\",\"order\":\"row-major\"}\n", "x").is_err());
        assert!(decode(b"{\"rows\":1,\"cols\":1,\"dtype\":\"f64\",\"order\":\"col-major\"}\n12345678", "x").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_qmx("/nonexistent/file.qmx"), Err(Error::Io { .. })));
    }
}
