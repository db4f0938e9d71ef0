//! Single-level orthonormal 2D Haar transform.
//!
//! For each 2x2 block `[[a, b], [c, d]]` (a, b on the same row):
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! LH is the row-pair (frequency) difference, HL the column-pair (time)
//! difference. Odd dimensions are padded by replicating the last row/column.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{SpecKind, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubBand {
    LL,
    LH,
    HL,
    HH,
}

impl SubBand {
    pub const ALL: [SubBand; 4] = [SubBand::LL, SubBand::LH, SubBand::HL, SubBand::HH];
}

impl fmt::Display for SubBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubBand::LL => "LL",
            SubBand::LH => "LH",
            SubBand::HL => "HL",
            SubBand::HH => "HH",
        };
        f.write_str(s)
    }
}

impl FromStr for SubBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LL" => Ok(SubBand::LL),
            "LH" => Ok(SubBand::LH),
            "HL" => Ok(SubBand::HL),
            "HH" => Ok(SubBand::HH),
            other => Err(Error::InvalidConfig(format!("unknown sub-band {other:?}"))),
        }
    }
}

/// The four sub-bands of one decomposition level plus the pre-padding shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBands<T> {
    pub ll: Array2<T>,
    pub lh: Array2<T>,
    pub hl: Array2<T>,
    pub hh: Array2<T>,
    pub orig_rows: usize,
    pub orig_cols: usize,
    pub kind: SpecKind,
}

impl<T: Real> SubBands<T> {
    pub fn band(&self, b: SubBand) -> &Array2<T> {
        match b {
            SubBand::LL => &self.ll,
            SubBand::LH => &self.lh,
            SubBand::HL => &self.hl,
            SubBand::HH => &self.hh,
        }
    }

    pub fn band_mut(&mut self, b: SubBand) -> &mut Array2<T> {
        match b {
            SubBand::LL => &mut self.ll,
            SubBand::LH => &mut self.lh,
            SubBand::HL => &mut self.hl,
            SubBand::HH => &mut self.hh,
        }
    }

    /// Shape shared by all four bands.
    pub fn band_shape(&self) -> (usize, usize) {
        self.ll.dim()
    }

    /// Sub-bands of an `orig_rows x orig_cols` input with only `band` set.
    pub fn from_single(band: SubBand, values: Array2<T>, orig_rows: usize, orig_cols: usize) -> Self {
        let z = Array2::zeros(values.dim());
        let mut out = SubBands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            orig_rows,
            orig_cols,
            kind: SpecKind::Mel,
        };
        *out.band_mut(band) = values;
        out
    }

    pub fn energy(&self) -> T {
        SubBand::ALL
            .iter()
            .map(|&b| self.band(b).iter().map(|&x| x * x).sum::<T>())
            .sum()
    }
}

/// Forward transform. Inputs smaller than 2x2 are rejected.
pub fn dwt2<T: Real>(s: &Spectrogram<T>) -> Result<SubBands<T>> {
    let (h, w) = s.shape();
    if h < 2 || w < 2 {
        return Err(Error::InputTooSmall(format!("dwt2 needs at least 2x2, got {h}x{w}")));
    }
    let (hb, wb) = (h.div_ceil(2), w.div_ceil(2));
    let x = &s.data;
    let at = |r: usize, c: usize| x[[r.min(h - 1), c.min(w - 1)]];
    let half = T::lit(0.5);
    let mut ll = Array2::zeros((hb, wb));
    let mut lh = Array2::zeros((hb, wb));
    let mut hl = Array2::zeros((hb, wb));
    let mut hh = Array2::zeros((hb, wb));
    for i in 0..hb {
        for j in 0..wb {
            let a = at(2 * i, 2 * j);
            let b = at(2 * i, 2 * j + 1);
            let c = at(2 * i + 1, 2 * j);
            let d = at(2 * i + 1, 2 * j + 1);
            ll[[i, j]] = (a + b + c + d) * half;
            lh[[i, j]] = (a + b - c - d) * half;
            hl[[i, j]] = (a - b + c - d) * half;
            hh[[i, j]] = (a - b - c + d) * half;
        }
    }
    Ok(SubBands {
        ll,
        lh,
        hl,
        hh,
        orig_rows: h,
        orig_cols: w,
        kind: s.kind,
    })
}

/// Inverse transform, stripping any padding recorded in `orig_rows/orig_cols`.
pub fn idwt2<T: Real>(b: &SubBands<T>) -> Result<Spectrogram<T>> {
    let shape = b.ll.dim();
    for band in [SubBand::LH, SubBand::HL, SubBand::HH] {
        if b.band(band).dim() != shape {
            return Err(Error::Shape(format!(
                "{band} is {:?} but LL is {shape:?}",
                b.band(band).dim()
            )));
        }
    }
    let (hb, wb) = shape;
    let (h, w) = (b.orig_rows, b.orig_cols);
    if h.div_ceil(2) != hb || w.div_ceil(2) != wb || h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "sub-bands {hb}x{wb} cannot reconstruct {h}x{w}"
        )));
    }
    let half = T::lit(0.5);
    let mut out = Array2::zeros((h, w));
    for i in 0..hb {
        for j in 0..wb {
            let (s0, s1, s2, s3) = (b.ll[[i, j]], b.lh[[i, j]], b.hl[[i, j]], b.hh[[i, j]]);
            let block = [
                (0, 0, (s0 + s1 + s2 + s3) * half),
                (0, 1, (s0 + s1 - s2 - s3) * half),
                (1, 0, (s0 - s1 + s2 - s3) * half),
                (1, 1, (s0 - s1 - s2 + s3) * half),
            ];
            for (di, dj, v) in block {
                let (r, c) = (2 * i + di, 2 * j + dj);
                if r < h && c < w {
                    out[[r, c]] = v;
                }
            }
        }
    }
    Ok(Spectrogram {
        data: out,
        kind: b.kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(h: usize, w: usize, seed: u64) -> Spectrogram<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Spectrogram::mel(Array2::from_shape_fn((h, w), |_| rng.random_range(-3.0..3.0))).unwrap()
    }

    #[test]
    fn two_by_two_butterfly() {
        let s = Spectrogram::mel(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = dwt2(&s).unwrap();
        assert_eq!(b.ll, array![[5.0]]);
        assert_eq!(b.lh, array![[-2.0]]);
        assert_eq!(b.hl, array![[-1.0]]);
        assert_eq!(b.hh, array![[0.0]]);
    }

    #[test]
    fn inverse_of_butterfly() {
        let b = SubBands {
            ll: array![[5.0]],
            lh: array![[-2.0]],
            hl: array![[-1.0]],
            hh: array![[0.0]],
            orig_rows: 2,
            orig_cols: 2,
            kind: SpecKind::Mel,
        };
        assert_eq!(idwt2(&b).unwrap().data, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn constant_matrix() {
        let s = Spectrogram::mel(Array2::from_elem((6, 8), 1.5)).unwrap();
        let b = dwt2(&s).unwrap();
        assert!(b.ll.iter().all(|&x| x == 3.0));
        for band in [SubBand::LH, SubBand::HL, SubBand::HH] {
            assert!(b.band(band).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_bands_give_zero_matrix() {
        let b = SubBands::from_single(SubBand::LL, Array2::<f64>::zeros((3, 4)), 5, 8);
        let s = idwt2(&b).unwrap();
        assert_eq!(s.shape(), (5, 8));
        assert!(s.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn round_trip_80x200() {
        let s = random(80, 200, 11);
        let back = idwt2(&dwt2(&s).unwrap()).unwrap();
        let err = (&back.data - &s.data).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(err <= 1e-9);
    }

    #[test]
    fn too_small_rejected() {
        let s = Spectrogram::mel(Array2::<f64>::ones((1, 5))).unwrap();
        assert!(matches!(dwt2(&s), Err(Error::InputTooSmall(_))));
    }

    #[test]
    fn mismatched_bands_rejected() {
        let mut b = dwt2(&random(4, 4, 2)).unwrap();
        b.hh = Array2::zeros((3, 2));
        assert!(matches!(idwt2(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn subband_names_parse() {
        for b in SubBand::ALL {
            assert_eq!(b.to_string().parse::<SubBand>().unwrap(), b);
        }
        assert!("xx".parse::<SubBand>().is_err());
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(h in 2usize..24, w in 2usize..24, seed in any::<u64>()) {
            let s = random(h, w, seed);
            let back = idwt2(&dwt2(&s).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), (h, w));
            for (x, y) in back.data.iter().zip(s.data.iter()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn parseval_on_even_dims(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let s = random(2 * h, 2 * w, seed);
            let e: f64 = s.data.iter().map(|x| x * x).sum();
            let b = dwt2(&s).unwrap();
            prop_assert!((b.energy() - e).abs() <= 1e-9 * e.max(1.0));
        }

        #[test]
        fn ll_edit_is_linear(h in 2usize..16, w in 2usize..16, seed in any::<u64>()) {
            let s = random(h, w, seed);
            let mut b = dwt2(&s).unwrap();
            let delta = random(h.div_ceil(2).max(2), w.div_ceil(2).max(2), seed ^ 1).data
                .slice(ndarray::s![..h.div_ceil(2), ..w.div_ceil(2)]).to_owned();
            b.ll = &b.ll + &delta;
            let edited = idwt2(&b).unwrap();
            let only = idwt2(&SubBands::from_single(SubBand::LL, delta, h, w)).unwrap();
            for ((x, y), d) in edited.data.iter().zip(s.data.iter()).zip(only.data.iter()) {
                prop_assert!((x - y - d).abs() <= 1e-9);
            }
        }
    }
}
