//! Binomial hypothesis test for watermark presence, plus accuracy and
//! fidelity metrics.
//!
//! Under H0 (no watermark) each extracted bit matches the reference with
//! probability 1/2, so the match count is Binomial(N, 1/2).

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Spectrogram;
use crate::watermark::WatermarkPayload;
use crate::wavelet::{dwt2, SubBand};

pub const DEFAULT_FPR: f64 = 1e-3;

fn check_args(n: usize, k: usize, p: f64) -> Result<()> {
    if k > n {
        return Err(Error::InvalidConfig(format!("k={k} exceeds N={n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// ln(n!) - (n + 1/2) ln n + n - ln sqrt(2 pi), tabulated for small n.
const STIRLING_ERR: [f64; 16] = [
    0.0,
    0.08106146679532726,
    0.0413406959554093,
    0.02767792568499834,
    0.020790672103765093,
    0.016644691189821193,
    0.013876128823070748,
    0.01189670994589177,
    0.010411265261972096,
    0.009255462182712733,
    0.00833056343336287,
    0.007573675487951841,
    0.00694284010720953,
    0.006408994188004207,
    0.0059513701127588475,
    0.005554733551962801,
];

fn stirling_err(n: usize) -> f64 {
    if n < STIRLING_ERR.len() {
        return STIRLING_ERR[n];
    }
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance `x ln(x/m) + m - x`, by series when x is close to m.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1.. {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Binomial pmf by the saddle-point expansion (Loader 2000), accurate to a
/// few ulps for any n. The end terms use base 2 so p = 1/2 gives exact
/// powers of two.
fn pmf(n: usize, i: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let nf = n as f64;
    if i == 0 || i == n {
        let (keep, other) = if i == 0 { (q, p) } else { (p, q) };
        return if other < 0.1 {
            (-deviance(nf, nf * keep) - nf * other).exp()
        } else {
            (nf * keep.log2()).exp2()
        };
    }
    let x = i as f64;
    let lc = stirling_err(n) - stirling_err(i) - stirling_err(n - i) - deviance(x, nf * p) - deviance(nf - x, nf * q);
    let lf = std::f64::consts::TAU.ln() + x.ln() + (-x / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Compensated sum of pmf terms over `range`.
fn pmf_sum(n: usize, range: std::ops::Range<usize>, p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        let hit = if p == 0.0 { 0 } else { n };
        return if range.contains(&hit) { 1.0 } else { 0.0 };
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for i in range {
        let term = pmf(n, i, p);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    (sum + comp).clamp(0.0, 1.0)
}

/// `Pr(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binom_tail(n: usize, k: usize, p: f64) -> Result<f64> {
    check_args(n, k, p)?;
    if k == 0 {
        return Ok(1.0);
    }
    Ok(pmf_sum(n, k..n + 1, p))
}

/// `Pr(X < k)` under the alternative, summed directly rather than as a
/// complement of the upper tail.
pub fn fnr(n: usize, k: usize, p1: f64) -> Result<f64> {
    check_args(n, k, p1)?;
    Ok(pmf_sum(n, 0..k, p1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub k: usize,
    pub tau: f64,
    /// False when even `k = n` exceeds the bound (bound below `2^-n`).
    pub satisfiable: bool,
}

/// Smallest `k` with `binom_tail(n, k, 1/2) <= fpr_bound`.
pub fn solve_threshold(n: usize, fpr_bound: f64) -> Result<Threshold> {
    if n == 0 {
        return Err(Error::InvalidConfig("N must be positive".into()));
    }
    if !(0.0..=1.0).contains(&fpr_bound) {
        return Err(Error::InvalidConfig(format!("FPR bound {fpr_bound} outside [0, 1]")));
    }
    for k in 0..=n {
        if binom_tail(n, k, 0.5)? <= fpr_bound {
            return Ok(Threshold {
                k,
                tau: k as f64 / n as f64,
                satisfiable: true,
            });
        }
    }
    Ok(Threshold {
        k: n,
        tau: 1.0,
        satisfiable: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Watermarked,
    NotWatermarked,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Watermarked => "watermarked",
            Decision::NotWatermarked => "not_watermarked",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub n_bits: usize,
    pub matched: usize,
    pub accuracy: f64,
    pub threshold_tau: f64,
    pub p_value: f64,
    pub decision: Decision,
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} k={} acc={} tau={} p={:.3e} decision={}",
            self.n_bits, self.matched, self.accuracy, self.threshold_tau, self.p_value, self.decision
        )
    }
}

pub fn bit_accuracy(m: &WatermarkPayload, m_prime: &WatermarkPayload) -> Result<f64> {
    let k = m.matches(m_prime)?;
    Ok(k as f64 / m.len() as f64)
}

/// Compares the extracted payload against the reference at threshold `tau`.
pub fn verify(m: &WatermarkPayload, m_prime: &WatermarkPayload, tau: f64) -> Result<VerificationReport> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("tau {tau} outside [0, 1]")));
    }
    let accuracy = bit_accuracy(m, m_prime)?;
    let matched = m.matches(m_prime)?;
    Ok(VerificationReport {
        n_bits: m.len(),
        matched,
        accuracy,
        threshold_tau: tau,
        p_value: binom_tail(m.len(), matched, 0.5)?,
        decision: if accuracy >= tau {
            Decision::Watermarked
        } else {
            Decision::NotWatermarked
        },
    })
}

fn same_shape<T: Real>(s: &Spectrogram<T>, t: &Spectrogram<T>) -> Result<()> {
    if s.shape() != t.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", s.shape(), t.shape())));
    }
    Ok(())
}

/// Mean squared difference between the LL sub-bands of two spectrograms.
pub fn ll_mse<T: Real>(s: &Spectrogram<T>, s_tilde: &Spectrogram<T>) -> Result<f64> {
    same_shape(s, s_tilde)?;
    let a = dwt2(s)?;
    let b = dwt2(s_tilde)?;
    let (la, lb) = (a.band(SubBand::LL), b.band(SubBand::LL));
    let sum: f64 = la.iter().zip(lb.iter()).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum();
    Ok(sum / la.len() as f64)
}

/// `10 log10(||s||^2 / ||s - s~||^2)` in dB; `+inf` when identical.
pub fn spectral_snr<T: Real>(s: &Spectrogram<T>, s_tilde: &Spectrogram<T>) -> Result<f64> {
    same_shape(s, s_tilde)?;
    let signal: f64 = s.data.iter().map(|x| x.as_f64().powi(2)).sum();
    let noise: f64 = s.data.iter().zip(s_tilde.data.iter()).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Exact tail for p = 1/2 using integer binomials.
    fn half_tail_exact(n: usize, k: usize) -> f64 {
        let mut c = 1u128;
        let mut total = 0u128;
        for i in 0..=n {
            if i >= k {
                total += c;
            }
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        total as f64 / 2f64.powi(n as i32)
    }

    #[test]
    fn trivial_tails() {
        assert_eq!(binom_tail(10, 10, 0.5).unwrap(), 2f64.powi(-10));
        for n in [1, 7, 100] {
            assert_eq!(binom_tail(n, 0, 0.3).unwrap(), 1.0);
            assert_eq!(fnr(n, 0, 0.3).unwrap(), 0.0);
        }
        assert_eq!(binom_tail(5, 1, 0.0).unwrap(), 0.0);
        assert_eq!(binom_tail(5, 5, 1.0).unwrap(), 1.0);
        assert!(binom_tail(5, 6, 0.5).is_err());
        assert!(binom_tail(5, 2, 1.5).is_err());
    }

    #[test]
    fn half_tails_match_integer_oracle() {
        for n in 1..=100 {
            for k in 0..=n {
                let got = binom_tail(n, k, 0.5).unwrap();
                assert!((got - half_tail_exact(n, k)).abs() <= 1e-13, "n={n} k={k}");
            }
        }
        let t = binom_tail(100, 62, 0.5).unwrap();
        assert!((t - 1.05e-2).abs() < 5e-4, "{t}");
    }

    #[test]
    fn thresholds() {
        assert_eq!(solve_threshold(100, 1.0).unwrap(), Threshold { k: 0, tau: 0.0, satisfiable: true });
        assert_eq!(solve_threshold(10, 1e-3).unwrap().k, 10);
        let t = solve_threshold(100, 1e-3).unwrap();
        assert_eq!(t.k, 66);
        assert!(binom_tail(100, 65, 0.5).unwrap() > 1e-3);
        assert_eq!(solve_threshold(100, 0.0017).unwrap().k, 66);
        let u = solve_threshold(10, 1e-4).unwrap();
        assert_eq!((u.k, u.satisfiable), (10, false));
        assert!(solve_threshold(0, 0.1).is_err());
        assert!(solve_threshold(10, f64::NAN).is_err());
    }

    #[test]
    fn fnr_values() {
        let f = fnr(100, 97, 0.9983).unwrap();
        assert!(f <= 0.01, "{f}");
        for k in 0..=100 {
            let tot = fnr(100, k, 0.7).unwrap() + binom_tail(100, k, 0.7).unwrap();
            assert!((tot - 1.0).abs() < 1e-12);
        }
        let mut prev = 0.0;
        for k in 0..=50 {
            let f = fnr(50, k, 0.8).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn verify_cases() {
        let m = WatermarkPayload::random(100, &mut seed::rng(1)).unwrap();
        for tau in [0.0, 0.5, 0.66, 1.0] {
            let r = verify(&m, &m, tau).unwrap();
            assert_eq!((r.accuracy, r.decision), (1.0, Decision::Watermarked));
        }
        let r = verify(&m, &m.complement(), 0.66).unwrap();
        assert_eq!((r.matched, r.accuracy, r.p_value), (0, 0.0, 1.0));
        assert_eq!(r.decision, Decision::NotWatermarked);
        let mut rng = seed::rng(2);
        let mean: f64 = (0..1000)
            .map(|_| bit_accuracy(&m, &WatermarkPayload::random(100, &mut rng).unwrap()).unwrap())
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 0.5).abs() <= 0.05);
        assert!(verify(&m, &WatermarkPayload::random(99, &mut rng).unwrap(), 0.5).is_err());
    }

    #[test]
    fn report_line() {
        let m = WatermarkPayload::random(100, &mut seed::rng(3)).unwrap();
        let mut bits = m.bits().to_vec();
        bits[0] ^= 1;
        let r = verify(&m, &WatermarkPayload::new(bits).unwrap(), 0.66).unwrap();
        let line = r.to_string();
        assert!(line.starts_with("n=100 k=99 acc=0.99 tau=0.66 p="), "{line}");
        assert!(line.ends_with("decision=watermarked"));
    }

    #[test]
    fn fidelity_metrics() {
        let mut rng = seed::rng(4);
        let s = Spectrogram::mel(Array2::from_shape_fn((8, 12), |_| rng.random_range(0.0..3.0f64))).unwrap();
        assert_eq!(ll_mse(&s, &s).unwrap(), 0.0);
        assert_eq!(spectral_snr(&s, &s).unwrap(), f64::INFINITY);

        let noise = Array2::from_shape_fn((8, 12), |_| rng.sample::<f64, _>(StandardNormal));
        let scale = 0.1 * s.frobenius().as_f64() / noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        let t = Spectrogram::mel(&s.data + &(noise * scale)).unwrap();
        assert!((spectral_snr(&s, &t).unwrap() - 20.0).abs() < 1e-9);

        // brute-force LL: 2x2 block sums halved
        let mut sum = 0.0;
        for r in 0..4 {
            for c in 0..6 {
                let blk = |x: &Array2<f64>| {
                    (x[[2 * r, 2 * c]] + x[[2 * r, 2 * c + 1]] + x[[2 * r + 1, 2 * c]] + x[[2 * r + 1, 2 * c + 1]]) / 2.0
                };
                sum += (blk(&s.data) - blk(&t.data)).powi(2);
            }
        }
        assert!((ll_mse(&s, &t).unwrap() - sum / 24.0).abs() < 1e-12);
        let other = Spectrogram::mel(Array2::zeros((8, 10))).unwrap();
        assert!(ll_mse(&s, &other).is_err());
    }

    proptest! {
        #[test]
        fn tail_monotone(n in 1usize..150, p in 0.0f64..1.0, dp in 0.0f64..0.2) {
            let p2 = (p + dp).min(1.0);
            let mut prev = 1.0 + 1e-12;
            for k in 0..=n {
                let t = binom_tail(n, k, p).unwrap();
                prop_assert!(t <= prev + 1e-15);
                prop_assert!(binom_tail(n, k, p2).unwrap() + 1e-13 >= t);
                prev = t;
            }
        }

        #[test]
        fn solver_monotone(n in 1usize..120, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(solve_threshold(n, lo).unwrap().k >= solve_threshold(n, hi).unwrap().k);
        }

        #[test]
        fn decision_rule(s in any::<u64>(), flips in 0usize..50, tau in 0.0f64..1.0) {
            let m = WatermarkPayload::random(50, &mut seed::rng(s)).unwrap();
            let mut bits = m.bits().to_vec();
            for b in bits.iter_mut().take(flips) { *b ^= 1; }
            let r = verify(&m, &WatermarkPayload::new(bits).unwrap(), tau).unwrap();
            prop_assert_eq!(r.decision == Decision::Watermarked, r.accuracy >= tau);
        }
    }
}
