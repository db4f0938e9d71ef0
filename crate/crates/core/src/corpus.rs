//! Synthetic speech-like corpus: voiced syllables with gliding pitch and
//! formant envelopes, fricative noise bursts and pauses.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;
use crate::spectral::{melspec, MelConfig, Spectrogram, Waveform, DEFAULT_SAMPLE_RATE};

pub const DEFAULT_FRAMES: usize = 512;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub items: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub mel: MelConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            items: 16,
            frames: DEFAULT_FRAMES,
            sample_rate: DEFAULT_SAMPLE_RATE,
            mel: MelConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusItem<T> {
    pub waveform: Waveform<T>,
    pub mel: Spectrogram<T>,
}

/// Formant resonance gain at `f` for centres/bandwidths in Hz.
fn formant_gain(f: f64, formants: &[(f64, f64)]) -> f64 {
    formants
        .iter()
        .map(|&(c, bw)| 1.0 / (1.0 + ((f - c) / bw).powi(2)))
        .sum::<f64>()
        + 0.02
}

fn voiced<R: Rng + ?Sized>(out: &mut [f64], sr: f64, rng: &mut R) {
    let n = out.len();
    let f0_start = rng.random_range(95.0..240.0);
    let f0_end = f0_start * rng.random_range(0.8..1.25);
    let formants = [
        (rng.random_range(300.0..900.0), rng.random_range(60.0..120.0)),
        (rng.random_range(900.0..2300.0), rng.random_range(80.0..160.0)),
        (rng.random_range(2300.0..3500.0), rng.random_range(120.0..250.0)),
    ];
    let mut phase = 0.0f64;
    for (i, v) in out.iter_mut().enumerate() {
        let pos = i as f64 / n as f64;
        let f0 = f0_start + (f0_end - f0_start) * pos;
        phase += std::f64::consts::TAU * f0 / sr;
        let env = (std::f64::consts::PI * pos).sin().powf(0.6);
        let mut acc = 0.0;
        let mut h = 1;
        while h as f64 * f0 < 5000.0 {
            acc += formant_gain(h as f64 * f0, &formants) * (h as f64 * phase).sin() / (h as f64).sqrt();
            h += 1;
        }
        *v += env * acc;
    }
}

fn fricative<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    let n = out.len();
    let gain = rng.random_range(0.1..0.4);
    let mut prev = 0.0;
    for (i, v) in out.iter_mut().enumerate() {
        let env = (std::f64::consts::PI * i as f64 / n as f64).sin();
        let white: f64 = rng.sample(StandardNormal);
        // first difference tilts the noise toward high frequencies
        *v += gain * env * (white - prev);
        prev = white;
    }
}

/// A speech-like waveform whose mel spectrogram has exactly `frames` frames.
pub fn synth_waveform<R: Rng + ?Sized>(frames: usize, mel: &MelConfig, sample_rate: u32, rng: &mut R) -> Result<Waveform<f64>> {
    if frames == 0 {
        return Err(Error::InputTooShort("corpus item needs at least one frame".into()));
    }
    let len = mel.frames_to_len(frames);
    let sr = sample_rate as f64;
    let mut out = vec![0.0f64; len];
    let mut pos = 0usize;
    while pos < len {
        let dur = (rng.random_range(0.08..0.25) * sr) as usize;
        let end = (pos + dur).min(len);
        match rng.random_range(0..10) {
            0 => {}
            1 | 2 => fricative(&mut out[pos..end], rng),
            _ => voiced(&mut out[pos..end], sr, rng),
        }
        pos = end;
    }
    // low noise floor so no frame is digital silence
    for v in out.iter_mut() {
        *v += 1e-3 * rng.sample::<f64, _>(StandardNormal);
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    out.iter_mut().for_each(|v| *v *= PEAK / peak);
    Waveform::new(out, sample_rate)
}

/// Item `index` of the corpus; items are independent of each other.
pub fn corpus_item<T: Real>(cfg: &CorpusConfig, index: usize) -> Result<CorpusItem<T>> {
    cfg.mel.validate(cfg.sample_rate)?;
    let mut rng = seed::rng(seed::indexed(seed::subseed(cfg.seed, "corpus"), index as u64));
    let w = synth_waveform(cfg.frames, &cfg.mel, cfg.sample_rate, &mut rng)?;
    let waveform = Waveform {
        samples: w.samples.iter().map(|&x| T::lit(x)).collect(),
        sample_rate: w.sample_rate,
    };
    let mel = melspec(&waveform, &cfg.mel)?;
    Ok(CorpusItem { waveform, mel })
}

pub fn build_corpus<T: Real>(cfg: &CorpusConfig) -> Result<Vec<CorpusItem<T>>> {
    (0..cfg.items).map(|i| corpus_item(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            items: 3,
            frames: 64,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn shapes_and_range() {
        for item in build_corpus::<f64>(&small()).unwrap() {
            assert_eq!(item.mel.shape(), (80, 64));
            let peak = item.waveform.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!((peak - PEAK).abs() < 1e-12);
            assert!(item.mel.data.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let a: CorpusItem<f64> = corpus_item(&small(), 1).unwrap();
        let b: CorpusItem<f64> = corpus_item(&small(), 1).unwrap();
        let c: CorpusItem<f64> = corpus_item(&small(), 2).unwrap();
        assert_eq!(a.waveform, b.waveform);
        assert_ne!(a.waveform, c.waveform);
    }

    #[test]
    fn energy_below_8khz_has_structure() {
        let item: CorpusItem<f64> = corpus_item(&small(), 0).unwrap();
        let row_means: Vec<f64> = item.mel.data.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let low = row_means[..40].iter().sum::<f64>();
        let high = row_means[40..].iter().sum::<f64>();
        assert!(low > high);
        assert!(row_means.iter().all(|&m| m > 0.0));
    }
}
