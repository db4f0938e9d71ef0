use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stft::{stft_complex, window};
use super::{mel_filterbank, MelConfig, SpecKind, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Real;

const OLA_FLOOR: f64 = 1e-8;

/// Inverse STFT by weighted overlap-add, matching the framing of [`stft_complex`].
///
/// Output length is `n_fft + (frames - 1) * hop`.
pub fn istft<T: Real>(spec: &Array2<Complex<T>>, cfg: &MelConfig) -> Result<Vec<T>> {
    cfg.validate_framing()?;
    let (bins, frames) = spec.dim();
    if bins != cfg.n_bins() {
        return Err(Error::Shape(format!("expected {} bins, got {bins}", cfg.n_bins())));
    }
    let n = cfg.n_fft;
    let len = cfg.frames_to_len(frames);
    let win = window::<T>(cfg);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut out = vec![T::zero(); len];
    let mut norm = vec![T::zero(); len];
    let scale = T::one() / T::lit(n as f64);
    for f in 0..frames {
        for b in 0..bins {
            buf[b] = spec[[b, f]];
        }
        for b in bins..n {
            buf[b] = spec[[n - b, f]].conj();
        }
        // DC and Nyquist must be real for a real signal
        buf[0].im = T::zero();
        buf[n / 2].im = T::zero();
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = f * cfg.hop;
        for i in 0..n {
            out[start + i] = out[start + i] + buf[i].re * scale * win[i];
            norm[start + i] = norm[start + i] + win[i] * win[i];
        }
    }
    let floor = T::lit(OLA_FLOOR);
    for (x, w) in out.iter_mut().zip(norm) {
        *x = if w > floor { *x / w } else { T::zero() };
    }
    Ok(out)
}

/// Maps a log-mel spectrogram back to a linear magnitude spectrogram through
/// the filterbank pseudo-inverse, clamped at zero.
pub fn mel_to_linear<T: Real>(
    s: &Spectrogram<T>,
    cfg: &MelConfig,
    sample_rate: u32,
) -> Result<Array2<T>> {
    if s.rows() != cfg.n_mels {
        return Err(Error::Shape(format!(
            "mel spectrogram has {} rows, config expects {}",
            s.rows(),
            cfg.n_mels
        )));
    }
    let fb = mel_filterbank::<f64>(cfg, sample_rate)?;
    let (m, k) = fb.dim();
    let fbm = DMatrix::from_fn(m, k, |i, j| fb[[i, j]]);
    let pinv = fbm
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidConfig(format!("filterbank pseudo-inverse: {e}")))?;
    let w = s.cols();
    let mel_lin = DMatrix::from_fn(m, w, |i, j| s.data[[i, j]].as_f64().exp_m1().max(0.0));
    let lin = pinv * mel_lin;
    Ok(Array2::from_shape_fn((k, w), |(i, j)| T::lit(lin[(i, j)].max(0.0))))
}

/// Griffin-Lim phase reconstruction from a log-mel spectrogram.
///
/// The initial phase is drawn uniformly from `rng_seed`.
pub fn griffin_lim<T: Real>(
    s: &Spectrogram<T>,
    cfg: &MelConfig,
    sample_rate: u32,
    iters: usize,
    rng_seed: u64,
) -> Result<Waveform<T>> {
    if iters == 0 {
        return Err(Error::InvalidConfig("griffin_lim needs at least one iteration".into()));
    }
    if s.kind != SpecKind::Mel {
        return Err(Error::InvalidConfig("griffin_lim expects a mel spectrogram".into()));
    }
    let mag = mel_to_linear(s, cfg, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tau = std::f64::consts::TAU;
    let mut spec = mag.mapv(|m| {
        let ph: f64 = rng.random::<f64>() * tau;
        Complex::new(m * T::lit(ph.cos()), m * T::lit(ph.sin()))
    });
    for _ in 0..iters {
        let x = istft(&spec, cfg)?;
        let rebuilt = stft_complex(&x, cfg)?;
        ndarray::Zip::from(&mut spec)
            .and(&rebuilt)
            .and(&mag)
            .for_each(|z, r, &m| {
                let n = r.norm();
                *z = if n > T::zero() {
                    r * (m / n)
                } else {
                    Complex::new(m, T::zero())
                };
            });
    }
    let samples = istft(&spec, cfg)?;
    Ok(Waveform {
        samples,
        sample_rate,
    })
}
