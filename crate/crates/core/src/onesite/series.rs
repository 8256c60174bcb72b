//! Fixed-point evaluation of the alternating series behind the one-site law.
//!
//! With `y = h / b` the distribution function is `F(h) = f0 * e^y * S(y)`,
//!
//! ```text
//! S(y)  = sum_{k=0}^{m} (-(y - k) / e)^k / k!,             m = ceil(y) - 1
//! S'(y) = 1 + sum_{k=1}^{m} -(y / e) * (-(y - k) / e)^(k-1) / k!
//! ```
//!
//! (`S'` is the derivative of `e^y S(y)` divided by `e^y`.) For small `b` the
//! terms reach `e^{y/e}` while `S(y)` is of order `e^{-y}`, so the sums are
//! computed on big integers scaled by `2^p` with `p` about `2.1 y + 128` bits.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

#[derive(Debug, Clone)]
pub(crate) struct SeriesEvaluator {
    p: u64,
    inv_e: BigInt,
}

impl SeriesEvaluator {
    /// Enough precision for every `y <= y_max`.
    pub fn new(y_max: f64) -> Self {
        let p = (2.1 * y_max.max(1.0)).ceil() as u64 + 128;
        let inv_e = exp_minus_one(p);
        SeriesEvaluator { p, inv_e }
    }

    fn one(&self) -> BigInt {
        BigInt::one() << self.p
    }

    fn mul(&self, a: &BigInt, b: &BigInt) -> BigInt {
        (a * b) >> self.p
    }

    fn pow(&self, base: &BigInt, mut k: u64) -> BigInt {
        let mut acc = self.one();
        let mut sq = base.clone();
        while k > 0 {
            if k & 1 == 1 {
                acc = self.mul(&acc, &sq);
            }
            k >>= 1;
            if k > 0 {
                sq = self.mul(&sq, &sq);
            }
        }
        acc
    }

    /// `num / den` scaled by `2^p`, from two finite nonnegative doubles.
    pub fn ratio(&self, num: f64, den: f64) -> BigInt {
        let (mn, en) = decompose(num);
        let (md, ed) = decompose(den);
        let shift = self.p as i64 + en - ed;
        let n = BigInt::from(mn);
        let d = BigInt::from(md);
        if shift >= 0 {
            (n << shift as u64) / d
        } else {
            n / (d << (-shift) as u64)
        }
    }

    /// `S(y)` with terms `k = 0..=m`.
    pub fn s(&self, y: &BigInt, m: u64) -> BigInt {
        let mut sum = self.one();
        let mut fact = BigInt::one();
        for k in 1..=m {
            fact *= k;
            let z = self.z(y, k);
            sum += self.pow(&z, k) / &fact;
        }
        sum
    }

    /// `S'(y)` with terms `k = 0..=m`.
    pub fn s_prime(&self, y: &BigInt, m: u64) -> BigInt {
        let mut sum = self.one();
        let mut fact = BigInt::one();
        let lead = -self.mul(y, &self.inv_e);
        for k in 1..=m {
            fact *= k;
            let z = self.z(y, k);
            sum += self.mul(&lead, &self.pow(&z, k - 1)) / &fact;
        }
        sum
    }

    /// `-(y - k) / e`.
    fn z(&self, y: &BigInt, k: u64) -> BigInt {
        let shifted = y - (BigInt::from(k) << self.p);
        -self.mul(&shifted, &self.inv_e)
    }

    /// Natural log of a positive fixed-point value; `NaN` otherwise.
    pub fn ln(&self, x: &BigInt) -> f64 {
        if !x.is_positive() {
            return f64::NAN;
        }
        let bits = x.bits();
        let (top, shift) = if bits > 60 {
            (x >> (bits - 60), bits - 60)
        } else {
            (x.clone(), 0)
        };
        let top = top.to_f64().expect("at most 60 bits");
        top.ln() + (shift as f64 - self.p as f64) * std::f64::consts::LN_2
    }
}

/// `e^-1 * 2^p`, truncated.
fn exp_minus_one(p: u64) -> BigInt {
    let guard = 32;
    let mut term = BigInt::one() << (p + guard);
    let mut sum = term.clone();
    let mut k = 1u64;
    while !term.is_zero() {
        term /= k;
        if k % 2 == 1 {
            sum -= &term;
        } else {
            sum += &term;
        }
        k += 1;
    }
    sum >> guard
}

/// `v = m * 2^e` with integer `m`, for finite `v >= 0`.
fn decompose(v: f64) -> (u64, i64) {
    if v == 0.0 {
        return (0, 0);
    }
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}
