//! Waveforms, spectrograms, STFT/mel analysis, Griffin-Lim synthesis and file I/O.

mod griffin_lim;
mod mel;
mod spg;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, istft, mel_to_linear};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, melspec};
pub use spg::{decode_spg, encode_spg, read_spg, write_spg, SPG_MAGIC};
pub use stft::{hann_window, stft, stft_complex};
pub use wav::{read_wav, write_wav};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mono audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        let w = Self {
            samples,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InputTooShort("waveform has no samples".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite sample at {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> T {
        rms(&self.samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    Mel,
    LinearMagnitude,
}

/// Real matrix with frequency bins along rows and time frames along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub data: Array2<T>,
    pub kind: SpecKind,
}

impl<T: Real> Spectrogram<T> {
    pub fn new(data: Array2<T>, kind: SpecKind) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InputTooSmall(format!("empty spectrogram {h}x{w}")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite spectrogram entry".into()));
        }
        Ok(Self { data, kind })
    }

    pub fn mel(data: Array2<T>) -> Result<Self> {
        Self::new(data, SpecKind::Mel)
    }

    pub fn zeros(rows: usize, cols: usize, kind: SpecKind) -> Self {
        Self {
            data: Array2::zeros((rows, cols)),
            kind,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Converts the element type, e.g. `f64` to `f32` for storage.
    pub fn cast<U: Real>(&self) -> Spectrogram<U> {
        Spectrogram {
            data: self.data.mapv(|x| U::lit(x.as_f64())),
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

/// STFT and mel analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub window: Window,
}

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            window: Window::Hann,
        }
    }
}

impl MelConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of full frames for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    /// Signal length covered by `frames` analysis frames.
    pub fn frames_to_len(&self, frames: usize) -> usize {
        self.n_fft + frames.saturating_sub(1) * self.hop
    }

    /// Checks the framing parameters only.
    pub fn validate_framing(&self) -> Result<()> {
        if self.n_fft < 4 || !self.n_fft.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "n_fft must be even and >= 4, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "hop must satisfy 0 < hop <= n_fft, got {}",
                self.hop
            )));
        }
        Ok(())
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        self.validate_framing()?;
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fmin < fmax, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > nyquist {
            return Err(Error::InvalidConfig(format!(
                "fmax {} exceeds Nyquist {nyquist}",
                self.fmax
            )));
        }
        if self.n_mels < 2 {
            return Err(Error::InvalidConfig("n_mels must be >= 2".into()));
        }
        Ok(())
    }
}

pub fn rms<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let ss: T = xs.iter().map(|&x| x * x).sum();
    (ss / T::lit(xs.len() as f64)).sqrt()
}
