//! Named-tensor checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "CLVE"
//! version    u32       FORMAT_VERSION
//! repeated until the trailing checksum:
//!   name_len u16
//!   name     name_len bytes, UTF-8
//!   dtype    u8        0 = f32
//!   rank     u8
//!   dims     rank × u32
//!   payload  prod(dims) × f32, row-major
//! crc32      u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Tensors are written sorted by name, so identical parameters always give
//! identical bytes.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"CLVE";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checksum mismatch: file is corrupt")]
    CrcMismatch,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        NamedTensor {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        NamedTensor::new(
            name,
            vec![m.rows, m.cols],
            m.data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_matrix(&self) -> Result<Matrix, CheckpointError> {
        let (rows, cols) = match self.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            [] => (1, 1),
            _ => {
                return Err(CheckpointError::InvalidTensor {
                    name: self.name.clone(),
                    reason: format!("rank {} cannot be a matrix", self.dims.len()),
                })
            }
        };
        Ok(Matrix::from_vec(
            rows,
            cols,
            self.data.iter().map(|&v| v as f64).collect(),
        ))
    }

    fn element_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Looks up a tensor by name and converts it to a matrix of the given shape.
pub fn take_matrix(
    tensors: &[NamedTensor],
    name: &str,
    shape: (usize, usize),
) -> Result<Matrix, CheckpointError> {
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
    let m = t.to_matrix()?;
    if m.shape() != shape {
        return Err(CheckpointError::InvalidTensor {
            name: name.to_string(),
            reason: format!("expected shape {shape:?}, found {:?}", m.shape()),
        });
    }
    Ok(m)
}

pub fn to_bytes(tensors: &[NamedTensor]) -> Result<Vec<u8>, CheckpointError> {
    let mut names = BTreeSet::new();
    for t in tensors {
        if !names.insert(t.name.as_str()) {
            return Err(CheckpointError::DuplicateName(t.name.clone()));
        }
        if t.name.len() > u16::MAX as usize || t.dims.len() > u8::MAX as usize {
            return Err(CheckpointError::InvalidTensor {
                name: t.name.clone(),
                reason: "name or rank too large".into(),
            });
        }
        if t.element_count() != t.data.len() {
            return Err(CheckpointError::InvalidTensor {
                name: t.name.clone(),
                reason: format!("dims {:?} do not match {} values", t.dims, t.data.len()),
            });
        }
    }
    let mut sorted: Vec<&NamedTensor> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for t in sorted {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| CheckpointError::InvalidTensor {
                name: t.name.clone(),
                reason: "dimension exceeds u32".into(),
            })?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. Structural problems are reported before the
/// checksum is verified, so a short file is `Truncated` and a flipped
/// payload byte is `CrcMismatch`.
pub fn from_bytes(bytes: &[u8]) -> Result<Vec<NamedTensor>, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated);
    }
    let body_end = bytes.len() - 4;
    let mut r = Reader {
        buf: &bytes[..body_end],
        pos: 4,
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }

    let mut tensors = Vec::new();
    let mut names = BTreeSet::new();
    while r.pos < body_end {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| {
            CheckpointError::InvalidTensor {
                name: "<non-utf8>".into(),
                reason: "name is not UTF-8".into(),
            }
        })?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnsupportedDtype(dtype));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = r.take(count.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !names.insert(name.clone()) {
            return Err(CheckpointError::DuplicateName(name));
        }
        tensors.push(NamedTensor { name, dims, data });
    }

    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(CheckpointError::CrcMismatch);
    }
    Ok(tensors)
}

pub fn save(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let bytes = to_bytes(tensors)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>, CheckpointError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor::new("b", vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]),
            NamedTensor::new("a", vec![3], vec![f32::NAN, f32::INFINITY, 1e-40]),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact_and_sorted() {
        let bytes = to_bytes(&sample()).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back[0].name, "a");
        assert_eq!(back[1].name, "b");
        for t in &back {
            let orig = sample().into_iter().find(|o| o.name == t.name).unwrap();
            let ob: Vec<u32> = orig.data.iter().map(|v| v.to_bits()).collect();
            let tb: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ob, tb);
            assert_eq!(orig.dims, t.dims);
        }
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&[NamedTensor::new("w", vec![1], vec![2.0])]).unwrap();
        assert_eq!(&bytes[..4], b"CLVE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..10], &1u16.to_le_bytes());
        assert_eq!(bytes[10], b'w');
        assert_eq!(bytes[11], 0);
        assert_eq!(bytes[12], 1);
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &2.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 25);
    }

    #[test]
    fn duplicate_name_rejected() {
        let t = NamedTensor::new("x", vec![1], vec![0.0]);
        assert!(matches!(
            to_bytes(&[t.clone(), t]),
            Err(CheckpointError::DuplicateName(n)) if n == "x"
        ));
    }

    #[test]
    fn empty_set_is_valid() {
        let bytes = to_bytes(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&sample()).unwrap();

        let mut flipped = bytes.clone();
        let last_payload = bytes.len() - 5;
        flipped[last_payload] ^= 0x40;
        assert!(matches!(from_bytes(&flipped), Err(CheckpointError::CrcMismatch)));

        for cut in [3, 10, 20, bytes.len() - 1, bytes.len() - 7] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated)),
                "cut at {cut}"
            );
        }

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(from_bytes(&magic), Err(CheckpointError::BadMagic)));

        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            from_bytes(&version),
            Err(CheckpointError::VersionMismatch(9))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&sample(), &p).unwrap();
        let a = fs::read(&p).unwrap();
        save(&load(&p).unwrap(), &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), a);
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            rows in 0usize..5, cols in 0usize..5,
            bits in prop::collection::vec(any::<u32>(), 25),
        ) {
            let data: Vec<f32> = bits[..rows * cols].iter().map(|&b| f32::from_bits(b)).collect();
            let t = NamedTensor::new("t", vec![rows, cols], data);
            let back = from_bytes(&to_bytes(std::slice::from_ref(&t)).unwrap()).unwrap();
            let got: Vec<u32> = back[0].data.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
