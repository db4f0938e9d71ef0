use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{MelConfig, SpecKind, Spectrogram, Waveform, Window};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Periodic Hann window of length `n`.
pub fn hann_window<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            T::lit(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

pub(crate) fn window<T: Real>(cfg: &MelConfig) -> Vec<T> {
    match cfg.window {
        Window::Hann => hann_window(cfg.n_fft),
    }
}

/// Complex STFT without centering: frame `f` covers samples `f*hop .. f*hop + n_fft`.
///
/// Returns `(n_fft/2 + 1) x frames`.
pub fn stft_complex<T: Real>(samples: &[T], cfg: &MelConfig) -> Result<Array2<Complex<T>>> {
    cfg.validate_framing()?;
    if samples.len() < cfg.n_fft {
        return Err(Error::InputTooShort(format!(
            "signal of {} samples is shorter than one frame ({})",
            samples.len(),
            cfg.n_fft
        )));
    }
    let frames = cfg.n_frames(samples.len());
    let bins = cfg.n_bins();
    let win = window::<T>(cfg);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);
    let mut out = Array2::from_elem((bins, frames), Complex::new(T::zero(), T::zero()));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(samples[start + i] * win[i], T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for b in 0..bins {
            out[[b, f]] = buf[b];
        }
    }
    Ok(out)
}

/// Magnitude STFT of a waveform.
pub fn stft<T: Real>(w: &Waveform<T>, cfg: &MelConfig) -> Result<Spectrogram<T>> {
    let spec = stft_complex(&w.samples, cfg)?;
    Ok(Spectrogram {
        data: spec.mapv(|c| c.norm()),
        kind: SpecKind::LinearMagnitude,
    })
}
