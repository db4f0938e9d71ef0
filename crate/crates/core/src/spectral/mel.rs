use ndarray::Array2;

use super::{stft, MelConfig, SpecKind, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x (n_fft/2 + 1)`.
///
/// Filter centres are spaced evenly in mel from `fmin` to `fmax` inclusive and
/// each triangle reaches the neighbouring centres, so inside `[fmin, fmax]`
/// the weights form a partition of unity. Bins outside the band get no weight.
pub fn mel_filterbank<T: Real>(cfg: &MelConfig, sample_rate: u32) -> Result<Array2<T>> {
    cfg.validate(sample_rate)?;
    let bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let step = (hi - lo) / (cfg.n_mels - 1) as f64;
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;

    let mut fb = Array2::<T>::zeros((cfg.n_mels, bins));
    for b in 0..bins {
        let f = b as f64 * bin_hz;
        if f < cfg.fmin || f > cfg.fmax {
            continue;
        }
        let pos = (hz_to_mel(f) - lo) / step;
        let left = (pos.floor() as usize).min(cfg.n_mels - 1);
        let frac = pos - left as f64;
        fb[[left, b]] = T::lit(1.0 - frac);
        if left + 1 < cfg.n_mels && frac > 0.0 {
            fb[[left + 1, b]] = T::lit(frac);
        }
    }
    for (j, row) in fb.rows().into_iter().enumerate() {
        if row.iter().all(|&x| x == T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "mel filter {j} covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        }
    }
    Ok(fb)
}

pub(crate) fn apply_filterbank<T: Real>(fb: &Array2<T>, linear: &Array2<T>) -> Array2<T> {
    fb.dot(linear).mapv(|x| x.ln_1p())
}

/// Log-compressed mel spectrogram `ln(1 + FB * |STFT|)`.
pub fn melspec<T: Real>(w: &Waveform<T>, cfg: &MelConfig) -> Result<Spectrogram<T>> {
    let fb = mel_filterbank::<T>(cfg, w.sample_rate)?;
    let lin = stft(w, cfg)?;
    Ok(Spectrogram {
        data: apply_filterbank(&fb, &lin.data),
        kind: SpecKind::Mel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn mel_scale_inverts() {
        for f in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-6);
        }
    }

    #[test]
    fn two_filters_cover_full_band() {
        let cfg = MelConfig {
            n_fft: 64,
            n_mels: 2,
            fmin: 0.0,
            fmax: 4000.0,
            hop: 16,
            ..MelConfig::default()
        };
        let fb = mel_filterbank::<f64>(&cfg, 8000).unwrap();
        assert_eq!(fb.dim(), (2, 33));
        // first falls from 1 to 0, second rises from 0 to 1, overlap in between
        assert_eq!(fb[[0, 0]], 1.0);
        assert_eq!(fb[[1, 32]], 1.0);
        let overlap = (0..33).filter(|&b| fb[[0, b]] > 0.0 && fb[[1, b]] > 0.0).count();
        assert!(overlap > 20);
        for b in 0..33 {
            assert!(fb[[0, b]] + fb[[1, b]] > 0.0);
        }
    }

    #[test]
    fn default_filterbank_rows_and_coverage() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank::<f64>(&cfg, 22050).unwrap();
        assert_eq!(fb.dim(), (80, 513));
        assert!(fb.iter().all(|&x| x >= 0.0));
        for row in fb.rows() {
            assert!(row.sum() > 0.0);
        }
        let bin_hz = 22050.0 / 1024.0;
        for b in 0..513 {
            let f = b as f64 * bin_hz;
            let col = fb.column(b).sum();
            if f <= 8000.0 {
                assert!((col - 1.0).abs() < 1e-12, "bin {b} weight {col}");
            } else {
                assert_eq!(col, 0.0);
            }
        }
    }

    #[test]
    fn each_row_is_a_single_triangle() {
        let fb = mel_filterbank::<f64>(&MelConfig::default(), 22050).unwrap();
        for row in fb.rows() {
            let peak = row.iter().cloned().enumerate().fold((0, 0.0), |a, (i, x)| if x > a.1 { (i, x) } else { a }).0;
            for b in 1..=peak {
                assert!(row[b] >= row[b - 1]);
            }
            for b in peak + 1..row.len() {
                assert!(row[b] <= row[b - 1]);
            }
        }
    }

    #[test]
    fn flat_spectrum_maps_to_positive_mel_vector() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank::<f64>(&cfg, 22050).unwrap();
        let flat = Array1::from_elem(513, 1.0);
        let mel = fb.dot(&flat);
        for (j, v) in mel.iter().enumerate() {
            let direct: f64 = fb.row(j).iter().sum();
            assert_eq!(*v, direct);
            assert!(*v > 0.0);
        }
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        let cfg = MelConfig {
            fmax: 12000.0,
            ..MelConfig::default()
        };
        assert!(matches!(mel_filterbank::<f64>(&cfg, 22050), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn too_many_filters_rejected() {
        let cfg = MelConfig {
            n_fft: 64,
            hop: 16,
            n_mels: 200,
            ..MelConfig::default()
        };
        assert!(matches!(mel_filterbank::<f64>(&cfg, 22050), Err(Error::InvalidConfig(_))));
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn melspec_zero_and_scaling() {
        let cfg = MelConfig::default();
        let z = Waveform::new(vec![0.0f64; 4096], 22050).unwrap();
        assert!(melspec(&z, &cfg).unwrap().data.iter().all(|&x| x == 0.0));

        let x = noise(6000, 1);
        let w = Waveform::new(x.clone(), 22050).unwrap();
        let w2 = Waveform::new(x.iter().map(|v| 2.0 * v).collect(), 22050).unwrap();
        let a = melspec(&w, &cfg).unwrap();
        let b = melspec(&w2, &cfg).unwrap();
        assert_eq!(a.shape(), (80, cfg.n_frames(6000)));
        for (p, q) in a.data.iter().zip(b.data.iter()) {
            assert!(q >= p);
        }
        for row in a.data.rows() {
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn trailing_partial_frame_is_ignored() {
        let cfg = MelConfig::default();
        let x = noise(1024 + 256 * 9, 3);
        let mut padded = x.clone();
        padded.extend(std::iter::repeat_n(0.0, cfg.hop - 1));
        let a = melspec(&Waveform::new(x, 22050).unwrap(), &cfg).unwrap();
        let b = melspec(&Waveform::new(padded, 22050).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
