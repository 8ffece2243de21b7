//! Nonnegative magnitudes stored as base-10 logarithms.
//!
//! Bound products such as `r^{L−1}` routinely leave the `f64` range, so every
//! bound is accumulated as a sum of logarithms. Zero is `log10 = −∞`.

use core::cmp::Ordering;
use core::fmt;
use core::ops::Mul;

use crate::math;

/// Linear values are reconstructed only below this exponent.
pub const LINEAR_LIMIT_LOG10: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Log10(f64);

impl Log10 {
    pub const ZERO: Self = Self(f64::NEG_INFINITY);
    pub const ONE: Self = Self(0.0);

    /// Logarithm of a nonnegative finite value. Negative inputs are treated
    /// as their magnitude.
    pub fn of(x: f64) -> Self {
        let x = x.abs();
        if x == 0.0 {
            Self::ZERO
        } else {
            Self(math::log10(x))
        }
    }

    pub fn from_log10(l: f64) -> Self {
        Self(l)
    }

    pub fn log10(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// The linear value, or `None` when it would be `≥ 10^300`.
    pub fn value(self) -> Option<f64> {
        (self.0 < LINEAR_LIMIT_LOG10).then(|| if self.is_zero() { 0.0 } else { math::pow10(self.0) })
    }

    pub fn powi(self, k: u32) -> Self {
        if k == 0 {
            Self::ONE
        } else {
            Self(self.0 * k as f64)
        }
    }

    /// `self^(1/k)`; `k = 0` gives one.
    pub fn root(self, k: u32) -> Self {
        if k == 0 {
            Self::ONE
        } else {
            Self(self.0 / k as f64)
        }
    }

    /// `self + other` in the linear domain.
    pub fn plus(self, other: Self) -> Self {
        let (hi, lo) = if self.0 >= other.0 { (self.0, other.0) } else { (other.0, self.0) };
        if lo == f64::NEG_INFINITY {
            return Self(hi);
        }
        Self(hi + math::log10(1.0 + math::pow10(lo - hi)))
    }

    pub fn sum(items: impl IntoIterator<Item = Self>) -> Self {
        items.into_iter().fold(Self::ZERO, Self::plus)
    }

    pub fn product(items: impl IntoIterator<Item = Self>) -> Self {
        items.into_iter().fold(Self::ONE, Mul::mul)
    }

    pub fn max(self, other: Self) -> Self {
        if other.0 > self.0 {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other.0 < self.0 {
            other
        } else {
            self
        }
    }
}

impl Mul for Log10 {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        // 0 · anything stays 0, even against an overflowed factor.
        if self.is_zero() || rhs.is_zero() {
            Self::ZERO
        } else {
            Self(self.0 + rhs.0)
        }
    }
}

impl PartialOrd for Log10 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl fmt::Display for Log10 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:e}"),
            None => write!(f, "10^{:.3}", self.0),
        }
    }
}
