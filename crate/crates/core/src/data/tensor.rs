//! The OVNT binary tensor container.
//!
//! Layout (all little-endian):
//!
//! | bytes | field                       |
//! |-------|-----------------------------|
//! | 4     | magic `"OVNT"`              |
//! | 1     | version (`1`)               |
//! | 1     | dtype code (1 f32, 2 u16, 3 u8) |
//! | 2     | reserved, zero              |
//! | 4     | ndim (u32)                  |
//! | 8·ndim| extents (u64), row-major    |
//! | ...   | payload                     |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OVNT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    U16 = 2,
    U8 = 3,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::U16),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U16(_) => DType::U16,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// An n-dimensional array with its shape. Row-major, last dimension fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::EmptyDimension { dims });
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::PayloadMismatch {
                expected: count * data.dtype().size(),
                found: data.len() * data.dtype().size(),
                dims,
            });
        }
        Ok(TensorFile { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn from_u16(dims: Vec<usize>, values: Vec<u16>) -> Result<Self> {
        Self::new(dims, TensorData::U16(values))
    }

    pub fn from_u8(dims: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_u16(self) -> Option<Vec<u16>> {
        match self.data {
            TensorData::U16(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload_len = self.data.len() * self.dtype().size();
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + payload_len);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses an encoded tensor. `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            path: origin.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(12));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_path_buf(),
                found: magic,
            });
        }
        if bytes.len() < 12 {
            return Err(truncated(12));
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion {
                path: origin.to_path_buf(),
                version: bytes[4],
            });
        }
        let dtype = DType::from_code(bytes[5]).ok_or(Error::UnknownDtype {
            path: origin.to_path_buf(),
            code: bytes[5],
        })?;
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = 12 + 8 * ndim;
        if bytes.len() < header {
            return Err(truncated(header as u64));
        }
        let dims: Vec<usize> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::EmptyDimension { dims });
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| truncated(u64::MAX))?;
        let expected = count as u64 * dtype.size() as u64;
        let payload = &bytes[header..];
        if (payload.len() as u64) < expected {
            return Err(Error::Truncated {
                path: origin.to_path_buf(),
                expected,
                found: payload.len() as u64,
            });
        }
        if payload.len() as u64 > expected {
            return Err(Error::PayloadMismatch {
                dims,
                expected: expected as usize,
                found: payload.len(),
            });
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U16 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(TensorFile { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    TensorFile::decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_for_2x3_f32() {
        let t = TensorFile::from_f32(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let bytes = t.encode();
        assert_eq!(
            &bytes[..12],
            &[0x4F, 0x56, 0x4E, 0x54, 0x01, 0x01, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00]
        );
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &3u64.to_le_bytes());
        assert_eq!(bytes.len() - 28, 24);
        assert_eq!(&bytes[28 + 4..28 + 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/t.ovnt");
        let t = TensorFile::from_u16(vec![2, 2], vec![1, 2, 3, 65535]).unwrap();
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn zero_dim_rejected() {
        let err = TensorFile::from_f32(vec![0], vec![]).unwrap_err();
        assert!(err.to_string().contains("empty dimension"));
        assert!(matches!(
            TensorFile::from_f32(vec![], vec![]),
            Err(Error::EmptyDimension { .. })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = TensorFile::from_u8(vec![1], vec![7]).unwrap().encode();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            TensorFile::decode(&bytes, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn unknown_version_and_dtype() {
        let good = TensorFile::from_u8(vec![1], vec![7]).unwrap().encode();
        let mut v = good.clone();
        v[4] = 2;
        assert!(matches!(
            TensorFile::decode(&v, Path::new("x")),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
        let mut d = good;
        d[5] = 9;
        assert!(matches!(
            TensorFile::decode(&d, Path::new("x")),
            Err(Error::UnknownDtype { code: 9, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let t = TensorFile::from_f32(vec![10], vec![0.5; 10]).unwrap();
        let bytes = t.encode();
        let cut = &bytes[..bytes.len() - 4];
        match TensorFile::decode(cut, Path::new("x")) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 40);
                assert_eq!(found, 36);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn f32_roundtrip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let values: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 16) as u32))
                .collect();
            let t = TensorFile::from_f32(dims, values.clone()).unwrap();
            let back = TensorFile::decode(&t.encode(), Path::new("p")).unwrap();
            let back_vals = back.as_f32().unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in values.iter().zip(back_vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
