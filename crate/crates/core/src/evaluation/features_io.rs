//! Binary feature-matrix container: the magic `LGFEAT\0\0`, little-endian
//! `u64` row and column counts, then row-major little-endian `f64` values.

use std::fs;
use std::path::Path;

use lunggan_tensor::Tensor;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LGFEAT\0\0";

pub fn write_feature_matrix(path: &Path, features: &Tensor) -> Result<()> {
    let s = features.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("feature matrix must be [N, d], got {s:?}")));
    }
    let mut bytes = Vec::with_capacity(24 + 8 * features.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(s[0] as u64).to_le_bytes());
    bytes.extend_from_slice(&(s[1] as u64).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_matrix(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("feature matrix", format!("{}: {d}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature matrix file"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 8 {
        return Err(bad(&format!("expected {} values, found {} bytes", rows * cols, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(&[rows, cols], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let t = Tensor::from_fn(&[3, 5], |i| i as f64 * 0.5 - 1.0);
        write_feature_matrix(&p, &t).unwrap();
        assert_eq!(read_feature_matrix(&p).unwrap(), t);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_feature_matrix(&p), Err(Error::Format { .. })));
    }
}
