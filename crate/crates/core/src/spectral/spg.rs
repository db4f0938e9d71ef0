//! `SPG1` binary spectrogram files: magic, `u32` rows, `u32` cols, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::path::Path;

use ndarray::Array2;

use super::{SpecKind, Spectrogram};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SPG_MAGIC: &[u8; 4] = b"SPG1";

pub fn encode_spg<T: Real>(s: &Spectrogram<T>) -> Vec<u8> {
    let (rows, cols) = s.shape();
    let mut out = Vec::with_capacity(12 + 4 * rows * cols);
    out.extend_from_slice(SPG_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &x in s.data.iter() {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_spg<T: Real>(bytes: &[u8]) -> Result<Spectrogram<T>> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("SPG header needs 12 bytes, got {}", bytes.len())));
    }
    if &bytes[..4] != SPG_MAGIC {
        return Err(Error::Format(format!("bad SPG magic {:?}", &bytes[..4])));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("SPG dimensions overflow".into()))?;
    let payload = &bytes[12..];
    if payload.len() != want {
        return Err(Error::Format(format!(
            "SPG {rows}x{cols} needs {want} payload bytes, found {}",
            payload.len()
        )));
    }
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
    Spectrogram::new(data, SpecKind::Mel).map_err(|e| Error::Format(e.to_string()))
}

/// Reads an SPG file. The kind is not stored and is reported as mel.
pub fn read_spg<T: Real>(path: impl AsRef<Path>) -> Result<Spectrogram<T>> {
    decode_spg(&std::fs::read(path)?)
}

/// Writes an SPG file. Values are stored as `f32`.
pub fn write_spg<T: Real>(path: impl AsRef<Path>, s: &Spectrogram<T>) -> Result<()> {
    std::fs::write(path, encode_spg(s))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_layout() {
        let s = Spectrogram::mel(ndarray::array![[1.0f64, 2.0], [3.0, -4.5]]).unwrap();
        let bytes = encode_spg(&s);
        assert_eq!(bytes.len(), 4 + 8 + 16);
        assert_eq!(&bytes[..4], b"SPG1");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &(-4.5f32).to_le_bytes());
    }

    #[test]
    fn wrong_magic_rejected() {
        let s = Spectrogram::mel(Array2::<f32>::ones((2, 3))).unwrap();
        let mut bytes = encode_spg(&s);
        bytes[3] = b'2';
        assert!(matches!(decode_spg::<f32>(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_spg::<f32>(&bytes[..7]), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.spg");
        let s = Spectrogram::mel(ndarray::array![[0.5f32, 1.25, 3.0], [7.0, -1.0, 0.0]]).unwrap();
        write_spg(&p, &s).unwrap();
        assert_eq!(read_spg::<f32>(&p).unwrap(), s);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-100.0f32..100.0));
            let s = Spectrogram::mel(data).unwrap();
            let back: Spectrogram<f32> = decode_spg(&encode_spg(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
