//! Signal-processing attacks on waveforms and mel spectrograms, and random
//! composites of 2-4 of them.
//!
//! Every attack preserves the input shape. Chains are written as
//! `clip:0.5+noise:0.2+lowpass:5000`.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;
use crate::spectral::{rms, Spectrogram, Waveform};

pub const DEFAULT_CLIP_LEVEL: f64 = 0.5;
pub const DEFAULT_NOISE_INTENSITY: f64 = 0.2;
pub const DEFAULT_MASK_FRACTION: f64 = 0.1;
pub const DEFAULT_AMP_FACTOR: f64 = 0.9;
pub const DEFAULT_ECHO_GAIN: f64 = 0.3;
pub const DEFAULT_ECHO_DELAY_SECS: f64 = 0.015;
pub const DEFAULT_ECHO_DELAY_FRAMES: f64 = 2.0;
pub const DEFAULT_LOWPASS_HZ: f64 = 5000.0;
pub const LOWPASS_TAPS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    /// Clamp to `±level * max|x|`.
    Clip { level: f64 },
    /// Add `N(0, (intensity * rms)^2)`.
    Noise { intensity: f64 },
    /// Zero `round(fraction * len)` samples (or spectrogram frames).
    TimeMask { fraction: f64 },
    AmpScale { factor: f64 },
    /// `y[n] = x[n] + gain * x[n - d]`; `delay` is seconds for waveforms and
    /// frames for spectrograms, `None` takes the domain default.
    Echo { gain: f64, delay: Option<f64> },
    Lowpass { cutoff_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Waveform,
    Spectrogram,
}

impl AttackSpec {
    /// The six attacks at their default parameters.
    pub fn defaults() -> [AttackSpec; 6] {
        [
            AttackSpec::Clip { level: DEFAULT_CLIP_LEVEL },
            AttackSpec::Noise { intensity: DEFAULT_NOISE_INTENSITY },
            AttackSpec::TimeMask { fraction: DEFAULT_MASK_FRACTION },
            AttackSpec::AmpScale { factor: DEFAULT_AMP_FACTOR },
            AttackSpec::Echo { gain: DEFAULT_ECHO_GAIN, delay: None },
            AttackSpec::Lowpass { cutoff_hz: DEFAULT_LOWPASS_HZ },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Clip { .. } => "clip",
            AttackSpec::Noise { .. } => "noise",
            AttackSpec::TimeMask { .. } => "time_mask",
            AttackSpec::AmpScale { .. } => "amp_scale",
            AttackSpec::Echo { .. } => "echo",
            AttackSpec::Lowpass { .. } => "lowpass",
        }
    }

    pub fn supports(&self, domain: Domain) -> bool {
        !matches!(
            (self, domain),
            (AttackSpec::Clip { .. } | AttackSpec::Lowpass { .. }, Domain::Spectrogram)
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidConfig(format!("{what} out of range: {v}")));
        match *self {
            AttackSpec::Clip { level } if !(level > 0.0 && level <= 1.0) => bad("clip level", level),
            AttackSpec::Noise { intensity } if !(intensity >= 0.0 && intensity.is_finite()) => {
                bad("noise intensity", intensity)
            }
            AttackSpec::TimeMask { fraction } if !(0.0..=1.0).contains(&fraction) => bad("mask fraction", fraction),
            AttackSpec::AmpScale { factor } if !(factor >= 0.0 && factor.is_finite()) => bad("amp factor", factor),
            AttackSpec::Echo { gain, .. } if !(0.0..=1.0).contains(&gain) => bad("echo gain", gain),
            AttackSpec::Echo { delay: Some(d), .. } if !(d >= 0.0 && d.is_finite()) => bad("echo delay", d),
            AttackSpec::Lowpass { cutoff_hz } if !(cutoff_hz > 0.0 && cutoff_hz.is_finite()) => {
                bad("lowpass cutoff", cutoff_hz)
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AttackSpec::Clip { level } => write!(f, "clip:{level}"),
            AttackSpec::Noise { intensity } => write!(f, "noise:{intensity}"),
            AttackSpec::TimeMask { fraction } => write!(f, "time_mask:{fraction}"),
            AttackSpec::AmpScale { factor } => write!(f, "amp_scale:{factor}"),
            AttackSpec::Echo { gain, delay: None } => write!(f, "echo:{gain}"),
            AttackSpec::Echo { gain, delay: Some(d) } => write!(f, "echo:{gain}:{d}"),
            AttackSpec::Lowpass { cutoff_hz } => write!(f, "lowpass:{cutoff_hz}"),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// `name[:p1[:p2]]`; missing parameters take their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default();
        let params = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad attack parameter {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let arg = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let max_params = if name == "echo" { 2 } else { 1 };
        if params.len() > max_params {
            return Err(Error::InvalidConfig(format!("too many parameters in {s:?}")));
        }
        let spec = match name {
            "clip" => AttackSpec::Clip { level: arg(0, DEFAULT_CLIP_LEVEL) },
            "noise" => AttackSpec::Noise { intensity: arg(0, DEFAULT_NOISE_INTENSITY) },
            "time_mask" | "mask" => AttackSpec::TimeMask { fraction: arg(0, DEFAULT_MASK_FRACTION) },
            "amp_scale" | "amp" => AttackSpec::AmpScale { factor: arg(0, DEFAULT_AMP_FACTOR) },
            "echo" => AttackSpec::Echo {
                gain: arg(0, DEFAULT_ECHO_GAIN),
                delay: params.get(1).copied(),
            },
            "lowpass" => AttackSpec::Lowpass { cutoff_hz: arg(0, DEFAULT_LOWPASS_HZ) },
            other => return Err(Error::InvalidConfig(format!("unknown attack {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// An ordered list of attacks applied left to right.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chain(pub Vec<AttackSpec>);

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Chain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().is_empty() {
            return Ok(Chain::default());
        }
        s.split('+').map(str::parse).collect::<Result<Vec<_>>>().map(Chain)
    }
}

/// Attacks applied in an order shuffled by `order_seed`; the same seed also
/// drives the stochastic attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSpec {
    pub specs: Vec<AttackSpec>,
    pub order_seed: u64,
}

impl CompositeSpec {
    pub fn new(specs: Vec<AttackSpec>, order_seed: u64) -> Result<Self> {
        if !(2..=4).contains(&specs.len()) {
            return Err(Error::InvalidConfig(format!(
                "a composite needs 2 to 4 attacks, got {}",
                specs.len()
            )));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(Self { specs, order_seed })
    }

    /// Draws 2-4 distinct default attacks usable in `domain`.
    pub fn random<R: Rng + ?Sized>(domain: Domain, rng: &mut R) -> Self {
        let pool: Vec<AttackSpec> = AttackSpec::defaults().into_iter().filter(|a| a.supports(domain)).collect();
        let k = rng.random_range(2..=4usize.min(pool.len()));
        let specs = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        Self {
            specs,
            order_seed: rng.random(),
        }
    }

    /// The attacks in the order they will be applied.
    pub fn ordered(&self) -> Vec<AttackSpec> {
        let mut order = self.specs.clone();
        order.shuffle(&mut seed::rng(self.order_seed));
        order
    }
}

/// Something an attack can be applied to.
pub trait Attackable: Sized {
    fn domain(&self) -> Domain;
    fn attack<R: Rng + ?Sized>(&self, spec: &AttackSpec, rng: &mut R) -> Result<Self>;

    fn apply_chain<R: Rng + ?Sized>(&self, chain: &Chain, rng: &mut R) -> Result<Self> {
        let mut x = self.attack_identity();
        for spec in &chain.0 {
            x = x.attack(spec, rng)?;
        }
        Ok(x)
    }

    fn attack_identity(&self) -> Self;
}

pub fn compose<X: Attackable>(x: &X, cs: &CompositeSpec) -> Result<X> {
    let mut rng = seed::rng(seed::indexed(cs.order_seed, 1));
    x.apply_chain(&Chain(cs.ordered()), &mut rng)
}

fn unsupported(spec: &AttackSpec) -> Error {
    Error::Unsupported(format!("{} has no spectrogram-domain variant", spec.name()))
}

/// Clamps samples to `±level * max|x|`.
pub fn clip<T: Real>(w: &Waveform<T>, level: f64) -> Result<Waveform<T>> {
    AttackSpec::Clip { level }.validate()?;
    let peak = w.samples.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let lim = peak * T::lit(level);
    Ok(Waveform {
        samples: w.samples.iter().map(|&x| x.max(-lim).min(lim)).collect(),
        sample_rate: w.sample_rate,
    })
}

fn noise_values<T: Real, R: Rng + ?Sized>(xs: &[T], intensity: f64, rng: &mut R) -> Vec<T> {
    let sd = rms(xs).as_f64() * intensity;
    xs.iter()
        .map(|&x| x + T::lit(sd * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn masked_positions<R: Rng + ?Sized>(len: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let k = ((fraction * len as f64).round() as usize).min(len);
    index::sample(rng, len, k).into_vec()
}

fn echo_1d<T: Real>(xs: &[T], gain: f64, delay: usize) -> Vec<T> {
    let g = T::lit(gain);
    (0..xs.len())
        .map(|n| if n >= delay { xs[n] + g * xs[n - delay] } else { xs[n] })
        .collect()
}

/// Linear-phase windowed-sinc lowpass taps (Hamming), normalized to unit DC gain.
pub fn lowpass_taps(cutoff_hz: f64, sample_rate: u32, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate as f64;
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let win = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64).cos();
            sinc * win
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// 101-tap FIR lowpass, delay-compensated, edges extended by replication.
pub fn lowpass<T: Real>(w: &Waveform<T>, cutoff_hz: f64) -> Result<Waveform<T>> {
    AttackSpec::Lowpass { cutoff_hz }.validate()?;
    if cutoff_hz >= w.sample_rate as f64 / 2.0 {
        return Err(Error::InvalidConfig(format!(
            "cutoff {cutoff_hz} Hz is not below Nyquist of {} Hz",
            w.sample_rate
        )));
    }
    let h = lowpass_taps(cutoff_hz, w.sample_rate, LOWPASS_TAPS);
    let half = (LOWPASS_TAPS / 2) as isize;
    let n = w.samples.len() as isize;
    let at = |i: isize| w.samples[i.clamp(0, n - 1) as usize].as_f64();
    let samples = (0..n)
        .map(|i| {
            let acc: f64 = h.iter().enumerate().map(|(k, &c)| c * at(i + half - k as isize)).sum();
            T::lit(acc)
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

pub fn add_noise<X: Attackable, R: Rng + ?Sized>(x: &X, intensity: f64, rng: &mut R) -> Result<X> {
    x.attack(&AttackSpec::Noise { intensity }, rng)
}

pub fn time_mask<X: Attackable, R: Rng + ?Sized>(x: &X, fraction: f64, rng: &mut R) -> Result<X> {
    x.attack(&AttackSpec::TimeMask { fraction }, rng)
}

pub fn amp_scale<X: Attackable>(x: &X, factor: f64) -> Result<X> {
    x.attack(&AttackSpec::AmpScale { factor }, &mut seed::rng(0))
}

pub fn echo<X: Attackable>(x: &X, gain: f64, delay: Option<f64>) -> Result<X> {
    x.attack(&AttackSpec::Echo { gain, delay }, &mut seed::rng(0))
}

impl<T: Real> Attackable for Waveform<T> {
    fn domain(&self) -> Domain {
        Domain::Waveform
    }

    fn attack_identity(&self) -> Self {
        self.clone()
    }

    fn attack<R: Rng + ?Sized>(&self, spec: &AttackSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let sr = self.sample_rate;
        let samples = match *spec {
            AttackSpec::Clip { level } => return clip(self, level),
            AttackSpec::Lowpass { cutoff_hz } => return lowpass(self, cutoff_hz),
            AttackSpec::Noise { intensity } => noise_values(&self.samples, intensity, rng),
            AttackSpec::TimeMask { fraction } => {
                let mut s = self.samples.clone();
                for i in masked_positions(s.len(), fraction, rng) {
                    s[i] = T::zero();
                }
                s
            }
            AttackSpec::AmpScale { factor } => self.samples.iter().map(|&x| x * T::lit(factor)).collect(),
            AttackSpec::Echo { gain, delay } => {
                let secs = delay.unwrap_or(DEFAULT_ECHO_DELAY_SECS);
                echo_1d(&self.samples, gain, (secs * sr as f64).round() as usize)
            }
        };
        Ok(Waveform { samples, sample_rate: sr })
    }
}

impl<T: Real> Attackable for Spectrogram<T> {
    fn domain(&self) -> Domain {
        Domain::Spectrogram
    }

    fn attack_identity(&self) -> Self {
        self.clone()
    }

    fn attack<R: Rng + ?Sized>(&self, spec: &AttackSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (h, w) = self.shape();
        let data = match *spec {
            AttackSpec::Clip { .. } | AttackSpec::Lowpass { .. } => return Err(unsupported(spec)),
            AttackSpec::Noise { intensity } => {
                let flat: Vec<T> = self.data.iter().copied().collect();
                Array2::from_shape_vec((h, w), noise_values(&flat, intensity, rng)).expect("shape")
            }
            AttackSpec::TimeMask { fraction } => {
                let mut d = self.data.clone();
                for f in masked_positions(w, fraction, rng) {
                    d.column_mut(f).fill(T::zero());
                }
                d
            }
            AttackSpec::AmpScale { factor } => self.data.mapv(|x| x * T::lit(factor)),
            AttackSpec::Echo { gain, delay } => {
                let frames = delay.unwrap_or(DEFAULT_ECHO_DELAY_FRAMES).round() as usize;
                let mut d = self.data.clone();
                for r in 0..h {
                    let row: Vec<T> = self.data.row(r).to_vec();
                    for (f, v) in echo_1d(&row, gain, frames).into_iter().enumerate() {
                        d[[r, f]] = v;
                    }
                }
                d
            }
        };
        Ok(Spectrogram { data, kind: self.kind })
    }
}
