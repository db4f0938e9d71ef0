use ndarray::Array2;

use super::carriers::CarrierSet;
use super::payload::WatermarkPayload;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Spectrogram;
use crate::wavelet::{dwt2, idwt2, SubBand, SubBands};

/// Embedding parameters: strength `alpha`, target band, hook step and key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub alpha: f64,
    pub subband: SubBand,
    pub embed_step: usize,
    pub key: u64,
}

pub const DEFAULT_ALPHA: f64 = 0.19;
pub const DEFAULT_EMBED_STEP: usize = 45;

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            subband: SubBand::LL,
            embed_step: DEFAULT_EMBED_STEP,
            key: 0x5eed,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_shape<T>(x: &Array2<T>, carriers: &CarrierSet) -> Result<()> {
    if x.dim() != carriers.shape() {
        return Err(Error::Shape(format!(
            "target is {:?} but carriers are {:?}",
            x.dim(),
            carriers.shape()
        )));
    }
    Ok(())
}

/// The unit-strength pattern `(1/sqrt(N)) * sum_i (2 m_i - 1) C_i`.
pub fn spread_pattern<T: Real>(m: &WatermarkPayload, carriers: &CarrierSet) -> Result<Array2<T>> {
    if m.len() != carriers.len() {
        return Err(Error::Capacity(format!(
            "payload has {} bits but {} carriers were generated",
            m.len(),
            carriers.len()
        )));
    }
    let cells = carriers.rows * carriers.cols;
    let mut acc = vec![0i32; cells];
    for (c, b) in carriers.carriers.iter().zip(m.signs()) {
        for (j, slot) in acc.iter_mut().enumerate() {
            *slot += b * c.sign(j);
        }
    }
    let scale = 1.0 / (m.len() as f64).sqrt();
    let values = acc.into_iter().map(|v| T::lit(v as f64 * scale)).collect();
    Ok(Array2::from_shape_vec(carriers.shape(), values).expect("carrier shape"))
}

/// Adds `alpha * pattern` to a matrix in place.
pub fn embed_matrix<T: Real>(
    x: &mut Array2<T>,
    m: &WatermarkPayload,
    alpha: f64,
    carriers: &CarrierSet,
) -> Result<()> {
    check_shape(x, carriers)?;
    if alpha == 0.0 {
        return Ok(());
    }
    let pattern = spread_pattern::<T>(m, carriers)?;
    x.scaled_add(T::lit(alpha), &pattern);
    Ok(())
}

/// Embeds into `cfg.subband`, leaving the other three bands untouched.
pub fn embed_ss<T: Real>(
    b: &SubBands<T>,
    m: &WatermarkPayload,
    cfg: &EmbedConfig,
    carriers: &CarrierSet,
) -> Result<SubBands<T>> {
    cfg.validate()?;
    let mut out = b.clone();
    embed_matrix(out.band_mut(cfg.subband), m, cfg.alpha, carriers)?;
    Ok(out)
}

/// Decoded bits and per-bit scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub payload: WatermarkPayload,
    /// Raw correlations, or correlations divided by the expected
    /// `alpha * cells / sqrt(N)` when a nominal strength is supplied.
    pub soft: Vec<f64>,
}

/// Correlation decoder over a matrix: `m'_i = [<x, C_i> >= 0]`.
pub fn extract_matrix<T: Real>(
    x: &Array2<T>,
    carriers: &CarrierSet,
    alpha_nominal: Option<f64>,
) -> Result<Extraction> {
    check_shape(x, carriers)?;
    let flat: Vec<T> = x.iter().copied().collect();
    let corr: Vec<f64> = carriers.carriers.iter().map(|c| c.correlate(&flat).as_f64()).collect();
    let bits = corr.iter().map(|&v| u8::from(v >= 0.0)).collect();
    let soft = match alpha_nominal {
        Some(a) if a > 0.0 => {
            let unit = a * (carriers.rows * carriers.cols) as f64 / (carriers.len() as f64).sqrt();
            corr.iter().map(|v| v / unit).collect()
        }
        _ => corr,
    };
    Ok(Extraction {
        payload: WatermarkPayload::new(bits)?,
        soft,
    })
}

pub fn extract_ss<T: Real>(
    b: &SubBands<T>,
    carriers: &CarrierSet,
    subband: SubBand,
    alpha_nominal: Option<f64>,
) -> Result<Extraction> {
    extract_matrix(b.band(subband), carriers, alpha_nominal)
}

/// `idwt2(embed_ss(dwt2(s), ...))`.
pub fn embed_in_spectrogram<T: Real>(
    s: &Spectrogram<T>,
    m: &WatermarkPayload,
    cfg: &EmbedConfig,
    carriers: &CarrierSet,
) -> Result<Spectrogram<T>> {
    let bands = dwt2(s)?;
    idwt2(&embed_ss(&bands, m, cfg, carriers)?)
}

pub fn extract_from_spectrogram<T: Real>(
    s: &Spectrogram<T>,
    carriers: &CarrierSet,
    subband: SubBand,
    alpha_nominal: Option<f64>,
) -> Result<Extraction> {
    extract_ss(&dwt2(s)?, carriers, subband, alpha_nominal)
}
