use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Real;

const FULL_SCALE: f64 = 32768.0;

fn format_err(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::Unsupported("WAV encoding".into()),
        other => Error::Format(other.to_string()),
    }
}

/// Reads a PCM16 mono RIFF/WAVE file into `[-1, 1)` samples.
pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let reader = WavReader::open(path.as_ref()).map_err(format_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!("{} channels; only mono is accepted", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported(format!(
            "{:?} {}-bit samples; only PCM16 is accepted",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::lit(v as f64 / FULL_SCALE)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(format_err)?;
    if samples.len() != expected {
        return Err(Error::Format(format!("expected {expected} samples, found {}", samples.len())));
    }
    if samples.is_empty() {
        return Err(Error::Format("WAV file holds no samples".into()));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes PCM16 mono. Samples outside `[-1, 1)` saturate.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    w.validate()?;
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(format_err)?;
    for &s in &w.samples {
        let q = (s.as_f64() * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64);
        writer.write_sample(q as i16).map_err(format_err)?;
    }
    writer.finalize().map_err(format_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let sr = 22050;
        let samples: Vec<f64> = (0..sr as usize)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin())
            .collect();
        let w = Waveform::new(samples, sr).unwrap();
        write_wav(&path, &w).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, sr);
        assert_eq!(back.len(), w.len());
        let worst = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 2.0 / 32768.0, "{worst}");
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.25f64; 1000], 8000).unwrap();
        write_wav(&path, &w).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(Error::Format(_))));
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn stereo_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            wr.write_sample(1i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav::<f64>(&path), Err(Error::Unsupported(_))));
    }

    #[test]
    fn empty_waveform_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::<f64> {
            samples: vec![],
            sample_rate: 8000,
        };
        assert!(matches!(write_wav(dir.path().join("e.wav"), &w), Err(Error::InputTooShort(_))));
    }
}
