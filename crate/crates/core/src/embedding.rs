//! Per-(case, channel) embedding matrices and their binary file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0..4    b"TFV1"
//! 4..8    u32 n_frames
//! 8..12   u32 dim
//! 12..    n_frames * dim f32 values, row-major
//! ```
//!
//! There is no padding and no trailer. Row `t` is the embedding of the frame
//! with `t_index == t`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TFV1";
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("i/o error on embedding file: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected \"TFV1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported embedding format version {0:?}")]
    UnsupportedVersion([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("matrix shape {n_frames}x{dim} does not fit the u32 header fields")]
    TooLarge { n_frames: usize, dim: usize },
}

/// Dense row-major `n_frames x dim` matrix of `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Returns `None` if the length does
    /// not match the shape.
    pub fn new(n_frames: usize, dim: usize, data: Vec<f32>) -> Option<Self> {
        (n_frames.checked_mul(dim)? == data.len()).then_some(Self {
            n_frames,
            dim,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Option<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.as_ref().len() != dim {
                return None;
            }
            data.extend_from_slice(row.as_ref());
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        let dim = self.dim.max(1);
        let n = if self.dim == 0 { 0 } else { self.n_frames };
        self.data.chunks_exact(dim).take(n)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EmbeddingFileError> {
        let too_large = || EmbeddingFileError::TooLarge {
            n_frames: self.n_frames,
            dim: self.dim,
        };
        let n = u32::try_from(self.n_frames).map_err(|_| too_large())?;
        let d = u32::try_from(self.dim).map_err(|_| too_large())?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingFileError> {
        if bytes.len() < 4 {
            return Err(EmbeddingFileError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
        if &magic != MAGIC {
            // Same family, different revision.
            if &magic[0..3] == b"TFV" {
                return Err(EmbeddingFileError::UnsupportedVersion(magic));
            }
            return Err(EmbeddingFileError::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(EmbeddingFileError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let n_frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = n_frames
            .checked_mul(dim)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(HEADER_LEN))
            .ok_or(EmbeddingFileError::TooLarge { n_frames, dim })?;
        if bytes.len() != expected {
            return Err(EmbeddingFileError::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            n_frames,
            dim,
            data,
        })
    }
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingFileError> {
    let bytes = fs::read(path)?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_embedding_file(
    matrix: &EmbeddingMatrix,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingFileError> {
    let bytes = matrix.to_bytes()?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_by_four_layout() {
        let m = EmbeddingMatrix::new(3, 4, (0..12).map(|v| v as f32 * 0.5 - 1.0).collect()).unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 48);
        assert_eq!(&bytes[0..4], b"TFV1");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &(-1.0f32).to_le_bytes());
        assert_eq!(&bytes[56..60], &4.5f32.to_le_bytes());
        assert_eq!(EmbeddingMatrix::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = EmbeddingMatrix::new(1, 1, vec![1.0]).unwrap().to_bytes().unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingFileError::BadMagic { .. })
        ));
    }

    #[test]
    fn other_version() {
        let mut bytes = EmbeddingMatrix::new(1, 1, vec![1.0]).unwrap().to_bytes().unwrap();
        bytes[3] = b'2';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(EmbeddingFileError::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = EmbeddingMatrix::new(2, 2, vec![1.0; 4]).unwrap().to_bytes().unwrap();
        for cut in [2, 8, bytes.len() - 1] {
            assert!(matches!(
                EmbeddingMatrix::from_bytes(&bytes[..cut]),
                Err(EmbeddingFileError::TruncatedPayload { .. })
            ));
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&longer),
            Err(EmbeddingFileError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tfv");
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, f32::MIN_POSITIVE], [-0.0, 3.25]]).unwrap();
        write_embedding_file(&m, &path).unwrap();
        let back = read_embedding_file(&path).unwrap();
        let a: Vec<u32> = m.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn bytes_round_trip_is_bit_exact(n in 0usize..8, d in 0usize..8, seed in any::<u64>()) {
            let mut s = seed | 1;
            let data: Vec<f32> = (0..n * d).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                f32::from_bits(s as u32)
            }).filter(|v| v.is_finite()).chain(std::iter::repeat(0.0)).take(n * d).collect();
            let m = EmbeddingMatrix::new(n, d, data).unwrap();
            let back = EmbeddingMatrix::from_bytes(&m.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.n_frames(), n);
            prop_assert_eq!(back.dim(), d);
            let a: Vec<u32> = m.as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
