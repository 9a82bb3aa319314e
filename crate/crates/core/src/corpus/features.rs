//! Binary region-feature files: `SFV1`, little-endian `u32` rows and cols,
//! then `rows * cols` little-endian `f32` values.

use std::fs;
use std::path::Path;

use super::records::Mode;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"SFV1";

pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path, mode: Mode) -> Result<Matrix> {
    let corrupt = |message: String| Error::Corruption {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(corrupt("missing SFV1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(corrupt(format!(
            "header says {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    if rows == 0 && mode == Mode::Multimodal {
        return Err(corrupt("empty feature matrix in multimodal mode".into()));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| corrupt(e.to_string()))
}

pub fn load_features(path: &Path, mode: Mode) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path, mode)
}

pub fn save_features(path: &Path, m: &Matrix) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("mem.sfv")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Matrix::new(2, 3, vec![0.5, -1.25, 3.0, 1e-3_f32 as f64, 7.0, -0.0]).unwrap();
        let bytes = encode_features(&m);
        let back = decode_features(&bytes, &p(), Mode::Multimodal).unwrap();
        assert_eq!(encode_features(&back), bytes);
        assert_eq!(back, m);
    }

    #[test]
    fn empty_only_in_text_mode() {
        let bytes = encode_features(&Matrix::zeros(0, 8));
        assert_eq!(decode_features(&bytes, &p(), Mode::TextOnly).unwrap().shape(), (0, 8));
        assert!(decode_features(&bytes, &p(), Mode::Multimodal).is_err());
    }

    #[test]
    fn length_mismatch_is_corruption() {
        let mut bytes = encode_features(&Matrix::zeros(2, 2));
        bytes.pop();
        assert!(matches!(
            decode_features(&bytes, &p(), Mode::Multimodal),
            Err(Error::Corruption { .. })
        ));
        assert!(decode_features(b"SFV2\0\0\0\0\0\0\0\0", &p(), Mode::TextOnly).is_err());
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = encode_features(&Matrix::zeros(1, 2));
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_features(&bytes, &p(), Mode::Multimodal).is_err());
    }
}
