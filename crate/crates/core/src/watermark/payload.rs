use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Binary watermark `m = (m_1, ..., m_N)`, `N >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WatermarkPayload {
    bits: Vec<u8>,
}

impl WatermarkPayload {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidConfig("payload needs at least one bit".into()));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidConfig(format!("bit {i} is {} (not 0/1)", bits[i])));
        }
        Ok(Self { bits })
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        Self::new(bits.into_iter().map(u8::from).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..n).map(|_| rng.random_range(0..2u8)).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Antipodal symbols `2 m_i - 1`.
    pub fn signs(&self) -> impl Iterator<Item = i32> + '_ {
        self.bits.iter().map(|&b| 2 * b as i32 - 1)
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// Number of positions where the two payloads agree.
    pub fn matches(&self, other: &Self) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::Capacity(format!(
                "payload lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count())
    }

    /// Lowercase hex, `m_1` as the most significant bit, left-padded with
    /// zero bits to a whole number of digits.
    pub fn to_hex(&self) -> String {
        let n = self.bits.len();
        let digits = n.div_ceil(4);
        let pad = digits * 4 - n;
        let padded: Vec<u8> = std::iter::repeat_n(0, pad).chain(self.bits.iter().copied()).collect();
        padded
            .chunks(4)
            .map(|c| {
                let v = c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).expect("nibble")
            })
            .collect()
    }

    /// Parses the [`to_hex`](Self::to_hex) form for a known bit count `n`.
    pub fn from_hex(hex: &str, n: usize) -> Result<Self> {
        let hex = hex.trim();
        if n == 0 {
            return Err(Error::InvalidConfig("payload needs at least one bit".into()));
        }
        let digits = n.div_ceil(4);
        if hex.len() != digits {
            return Err(Error::Capacity(format!(
                "{n} bits need {digits} hex digits, got {}",
                hex.len()
            )));
        }
        let mut bits = Vec::with_capacity(digits * 4);
        for ch in hex.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Format(format!("invalid hex digit {ch:?}")))?;
            if ch.is_ascii_uppercase() {
                return Err(Error::Format("payload hex must be lowercase".into()));
            }
            bits.extend((0..4).rev().map(|k| ((v >> k) & 1) as u8));
        }
        let pad = digits * 4 - n;
        if bits[..pad].iter().any(|&b| b != 0) {
            return Err(Error::Capacity(format!("hex value exceeds {n} bits")));
        }
        Self::new(bits.split_off(pad))
    }
}

impl fmt::Display for WatermarkPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_layout() {
        let p = WatermarkPayload::new(vec![1, 0, 1, 1, 0, 1]).unwrap();
        // 6 bits -> 2 digits, padded as 00101101
        assert_eq!(p.to_hex(), "2d");
        assert_eq!(WatermarkPayload::from_hex("2d", 6).unwrap(), p);
        assert!(WatermarkPayload::from_hex("ed", 6).is_err());
        assert!(WatermarkPayload::from_hex("2D", 6).is_err());
        assert!(matches!(WatermarkPayload::from_hex("2d0", 6), Err(Error::Capacity(_))));
    }

    #[test]
    fn rejects_bad_bits() {
        assert!(WatermarkPayload::new(vec![]).is_err());
        assert!(WatermarkPayload::new(vec![0, 2]).is_err());
    }

    #[test]
    fn matches_and_complement() {
        let p = WatermarkPayload::new(vec![1, 0, 1, 1]).unwrap();
        assert_eq!(p.matches(&p).unwrap(), 4);
        assert_eq!(p.matches(&p.complement()).unwrap(), 0);
        let q = WatermarkPayload::new(vec![1, 0]).unwrap();
        assert!(matches!(p.matches(&q), Err(Error::Capacity(_))));
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in proptest::collection::vec(0u8..2, 1..300)) {
            let p = WatermarkPayload::new(bits).unwrap();
            let hex = p.to_hex();
            prop_assert_eq!(hex.len(), p.len().div_ceil(4));
            prop_assert_eq!(WatermarkPayload::from_hex(&hex, p.len()).unwrap(), p);
        }
    }
}
