//! `STDW` named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STDW" | version: u32 | count: u64
//! per tensor: name_len: u64 | name: UTF-8 | rank: u64 | dims: u64 * rank | data: f32 * prod(dims)
//! metadata_len: u64 | metadata: UTF-8 "key = value" lines
//! ```
//!
//! The metadata block is always written; readers accept files that end right
//! after the last tensor and treat the metadata as empty.

use std::path::Path;

use crate::format::{put_f32s, put_u32, put_u64, ByteReader, FormatError};

use super::Tensor;

pub const STDW_MAGIC: [u8; 4] = *b"STDW";
pub const STDW_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub metadata: String,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&STDW_MAGIC);
        put_u32(&mut out, STDW_VERSION);
        put_u64(&mut out, self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            put_u64(&mut out, t.rank() as u64);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, t.data());
        }
        put_u64(&mut out, self.metadata.len() as u64);
        out.extend_from_slice(self.metadata.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.magic(STDW_MAGIC)?;
        let version = r.u32("version")?;
        if version != STDW_VERSION {
            return Err(FormatError::UnsupportedVersion { found: version, supported: STDW_VERSION });
        }
        let count = r.u64("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u64("name length")?;
            let name_len = usize::try_from(name_len).map_err(|_| FormatError::DimOverflow { dims: vec![name_len] })?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| FormatError::Invalid { what: "tensor name", detail: e.to_string() })?
                .to_owned();
            let rank = r.u64("rank")?;
            if rank > 8 {
                return Err(FormatError::Invalid { what: "rank", detail: format!("{name}: rank {rank} exceeds 8") });
            }
            let (dims, len) = r.dims(rank as usize, "dims")?;
            let data = r.f32s(len, "tensor data")?;
            let t =
                Tensor::new(&dims, data).map_err(|e| FormatError::Invalid { what: "tensor", detail: e.to_string() })?;
            tensors.push((name, t));
        }
        let len = r.u64("metadata length")?;
        let len = usize::try_from(len).map_err(|_| FormatError::DimOverflow { dims: vec![len] })?;
        let metadata = std::str::from_utf8(r.take(len, "metadata")?)
            .map_err(|e| FormatError::Invalid { what: "metadata", detail: e.to_string() })?
            .to_owned();
        r.finish()?;
        Ok(Self { tensors, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        TensorArchive {
            tensors: vec![
                ("a.weight".into(), Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0)),
                ("a.bias".into(), Tensor::from_fn(&[2], |i| -(i as f32))),
            ],
            metadata: "epoch = 3\n".into(),
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"STDW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 8);
        assert_eq!(&bytes[24..32], b"a.weight");
    }

    #[test]
    fn round_trip() {
        let a = sample();
        assert_eq!(TensorArchive::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TensorArchive::from_bytes(&bad), Err(FormatError::BadMagic { .. })));
        for cut in [3, 10, 30, bytes.len() - 20] {
            assert!(matches!(TensorArchive::from_bytes(&bytes[..cut]), Err(FormatError::Truncated { .. })));
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(TensorArchive::from_bytes(&v2), Err(FormatError::UnsupportedVersion { found: 2, .. })));
        let mut huge = bytes;
        // first tensor's first dim
        huge[40..48].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(TensorArchive::from_bytes(&huge).is_err());
    }
}
