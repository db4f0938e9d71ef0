use ndarray::Array2;

use super::payload::WatermarkPayload;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean squared distortion between original and watermarked LL bands.
pub fn loss_emb<T: Real>(orig_ll: &Array2<T>, wm_ll: &Array2<T>) -> Result<f64> {
    if orig_ll.dim() != wm_ll.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", orig_ll.dim(), wm_ll.dim())));
    }
    let n = orig_ll.len() as f64;
    let ss: f64 = orig_ll
        .iter()
        .zip(wm_ll.iter())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            d * d
        })
        .sum();
    Ok(ss / n)
}

/// Mean binary cross-entropy, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_ext(m: &WatermarkPayload, probs: &[f64]) -> Result<f64> {
    if probs.len() != m.len() {
        return Err(Error::Shape(format!("{} probabilities for {} bits", probs.len(), m.len())));
    }
    let total: f64 = m
        .bits()
        .iter()
        .zip(probs)
        .map(|(&bit, &p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if bit == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / m.len() as f64)
}
