#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Exact upper binomial tail as a big rational. `p` is taken at its exact
/// binary value.
pub fn tail_exact(n: usize, k: usize, p: f64) -> BigRational {
    let p = BigRational::from_float(p).expect("finite p");
    let q = BigRational::one() - &p;
    // over the common denominator d = p.den * q.den, p = a/d and q = b/d
    let a = p.numer() * q.denom();
    let b = q.numer() * p.denom();
    let d = p.denom() * q.denom();
    if k > n {
        return BigRational::zero();
    }
    let mut a_pow = vec![BigInt::one()];
    for i in 1..=n {
        let next = &a_pow[i - 1] * &a;
        a_pow.push(next);
    }
    let mut num = BigInt::zero();
    let mut b_pow = BigInt::one();
    // walk i from n down to k so b^(n-i) grows one factor at a time
    let mut c = BigInt::one();
    for i in (k..=n).rev() {
        num += &c * &a_pow[i] * &b_pow;
        b_pow *= &b;
        c = c * BigInt::from(i) / BigInt::from(n - i + 1);
    }
    BigRational::new(num, d.pow(n as u32))
}

pub fn tail_exact_f64(n: usize, k: usize, p: f64) -> f64 {
    tail_exact(n, k, p).to_f64().expect("representable")
}

/// Smallest k with exact tail at p=1/2 at most `fpr`, or None.
pub fn min_k(n: usize, fpr: f64) -> Option<usize> {
    let bound = BigRational::from_float(fpr).unwrap();
    (0..=n).find(|&k| tail_exact(n, k, 0.5) <= bound)
}
