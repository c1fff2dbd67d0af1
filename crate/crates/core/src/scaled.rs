//! Floating mantissa with an unbounded binary exponent.
//!
//! Partition functions grow like `exp(N * F)` and leave the `f64` range long
//! before the table sizes we care about. A `ScaledValue` keeps the mantissa in
//! `[1, 2)` and carries the exponent separately; zero is the only value with a
//! zero mantissa.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Mul};

const MANT_MASK: u64 = (1 << 52) - 1;
const ONE_BITS: u64 = 1023 << 52;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledValue {
    mant: f64,
    exp: i64,
}

impl Default for ScaledValue {
    fn default() -> Self {
        Self::ZERO
    }
}

/// Split a finite non-negative `x` into `(m, e)` with `m` in `[1, 2)` and `x = m * 2^e`.
#[inline]
pub fn frexp(x: f64) -> (f64, i64) {
    debug_assert!(x.is_finite() && x > 0.0);
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i64;
    if raw == 0 {
        // subnormal: lift into the normal range first
        let (m, e) = frexp(x * 2f64.powi(64));
        return (m, e - 64);
    }
    (f64::from_bits((bits & MANT_MASK) | ONE_BITS), raw - 1023)
}

/// `x * 2^e` without intermediate overflow for moderate `e`.
#[inline]
pub fn ldexp(x: f64, e: i64) -> f64 {
    if e > 1023 {
        if e > 2100 {
            return x * f64::INFINITY;
        }
        return ldexp(x * 2f64.powi(1023), e - 1023);
    }
    if e < -1022 {
        if e < -2200 {
            return 0.0;
        }
        return ldexp(x * 2f64.powi(-1022), e + 1022);
    }
    x * f64::from_bits(((e + 1023) as u64) << 52)
}

impl ScaledValue {
    pub const ZERO: ScaledValue = ScaledValue { mant: 0.0, exp: 0 };
    pub const ONE: ScaledValue = ScaledValue { mant: 1.0, exp: 0 };

    /// Builds from a finite non-negative float.
    #[inline]
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite() && x >= 0.0, "ScaledValue requires finite x >= 0, got {x}");
        if x == 0.0 {
            return Self::ZERO;
        }
        let (mant, exp) = frexp(x);
        Self { mant, exp }
    }

    /// `m * 2^e` for any finite non-negative `m`.
    #[inline]
    pub fn from_parts(m: f64, e: i64) -> Self {
        let mut v = Self::from_f64(m);
        if !v.is_zero() {
            v.exp += e;
        }
        v
    }

    /// `exp(x)` for arbitrary finite `x`.
    pub fn from_ln(x: f64) -> Self {
        if x == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        let y = x / std::f64::consts::LN_2;
        let e = y.floor();
        let m = ((y - e) * std::f64::consts::LN_2).exp();
        Self::from_parts(m, e as i64)
    }

    #[inline]
    pub fn mantissa(&self) -> f64 {
        self.mant
    }

    #[inline]
    pub fn exponent(&self) -> i64 {
        self.exp
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.mant == 0.0
    }

    /// Nearest `f64`; saturates to infinity or zero outside the range.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        ldexp(self.mant, self.exp)
    }

    /// Natural logarithm; `-inf` for zero.
    pub fn ln(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        self.mant.ln() + self.exp as f64 * std::f64::consts::LN_2
    }

    /// `self / other` as a plain float.
    pub fn ratio(&self, other: &ScaledValue) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        if other.is_zero() {
            return f64::INFINITY;
        }
        ldexp(self.mant / other.mant, self.exp - other.exp)
    }

    /// Multiplies by `2^e` exactly.
    #[inline]
    pub fn shifted(mut self, e: i64) -> Self {
        if !self.is_zero() {
            self.exp += e;
        }
        self
    }

    #[inline]
    pub fn mul_f64(self, k: f64) -> Self {
        if self.is_zero() || k == 0.0 {
            return Self::ZERO;
        }
        Self::from_parts(self.mant * k, self.exp)
    }
}

impl Add for ScaledValue {
    type Output = ScaledValue;
    #[inline]
    fn add(self, rhs: ScaledValue) -> ScaledValue {
        if self.is_zero() {
            return rhs;
        }
        if rhs.is_zero() {
            return self;
        }
        let (hi, lo) = if self.exp >= rhs.exp { (self, rhs) } else { (rhs, self) };
        let d = hi.exp - lo.exp;
        if d > 60 {
            return hi;
        }
        let m = hi.mant + ldexp(lo.mant, -d);
        // m in [1, 4)
        if m >= 2.0 {
            ScaledValue { mant: m * 0.5, exp: hi.exp + 1 }
        } else {
            ScaledValue { mant: m, exp: hi.exp }
        }
    }
}

impl AddAssign for ScaledValue {
    #[inline]
    fn add_assign(&mut self, rhs: ScaledValue) {
        *self = *self + rhs;
    }
}

impl Mul for ScaledValue {
    type Output = ScaledValue;
    #[inline]
    fn mul(self, rhs: ScaledValue) -> ScaledValue {
        if self.is_zero() || rhs.is_zero() {
            return ScaledValue::ZERO;
        }
        let m = self.mant * rhs.mant;
        if m >= 2.0 {
            ScaledValue { mant: m * 0.5, exp: self.exp + rhs.exp + 1 }
        } else {
            ScaledValue { mant: m, exp: self.exp + rhs.exp }
        }
    }
}

impl PartialOrd for ScaledValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            _ => match self.exp.cmp(&other.exp) {
                Ordering::Equal => self.mant.partial_cmp(&other.mant),
                o => Some(o),
            },
        }
    }
}

impl std::iter::Sum for ScaledValue {
    fn sum<I: Iterator<Item = ScaledValue>>(iter: I) -> Self {
        iter.fold(ScaledValue::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn frexp_roundtrip_and_subnormals() {
        for &x in &[1.0, 1.5, 3.0, 1e-310, 5e-324, 1e300, 0.1] {
            let (m, e) = frexp(x);
            assert!((1.0..2.0).contains(&m), "{x}: {m}");
            assert_eq!(ldexp(m, e), x);
        }
    }

    #[test]
    fn huge_products_keep_logs() {
        let a = ScaledValue::from_ln(5000.0);
        let b = ScaledValue::from_ln(-7000.0);
        assert_relative_eq!((a * b).ln(), -2000.0, max_relative = 1e-14);
        assert_relative_eq!((a + a).ln(), 5000.0 + std::f64::consts::LN_2, max_relative = 1e-14);
        assert_eq!((a * b).to_f64(), 0.0);
    }

    #[test]
    fn zero_behaves() {
        let z = ScaledValue::ZERO;
        let one = ScaledValue::ONE;
        assert_eq!(z + one, one);
        assert!((z * one).is_zero());
        assert!(z < one);
        assert_eq!(z.ln(), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn add_matches_f64(a in 1e-200f64..1e200, b in 1e-200f64..1e200) {
            let s = (ScaledValue::from_f64(a) + ScaledValue::from_f64(b)).to_f64();
            prop_assert!(((s - (a + b)) / (a + b)).abs() < 4e-16);
        }

        #[test]
        fn mul_matches_f64(a in 1e-100f64..1e100, b in 1e-100f64..1e100) {
            let s = (ScaledValue::from_f64(a) * ScaledValue::from_f64(b)).to_f64();
            prop_assert!(((s - a * b) / (a * b)).abs() < 4e-16);
        }

        #[test]
        fn shift_is_exact(a in 1e-10f64..1e10, k in -5000i64..5000) {
            let v = ScaledValue::from_f64(a).shifted(k);
            prop_assert_eq!(v.mantissa(), ScaledValue::from_f64(a).mantissa());
            prop_assert_eq!(v.shifted(-k).to_f64(), a);
        }

        #[test]
        fn ordering_matches_logs(x in -3000f64..3000.0, y in -3000f64..3000.0) {
            let a = ScaledValue::from_ln(x);
            let b = ScaledValue::from_ln(y);
            if (x - y).abs() > 1e-9 {
                prop_assert_eq!(a < b, x < y);
            }
        }
    }
}
