//! Exact accumulation of employee counts.
//!
//! Firm sizes are real numbers, and yearly bookkeeping (firms before, growth,
//! closures, firms after) has to balance to the last bit. Every live firm size
//! is at least 2^-11, so scaling by 2^64 maps it onto an integer without loss
//! and sums in `i128` are exact for any realistic population.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Fixed-point sum of `f64` values with 2^-64 resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactSum(i128);

impl ExactSum {
    pub const ZERO: ExactSum = ExactSum(0);

    /// Converts a finite value with magnitude below 2^62.
    ///
    /// Bits below 2^-64 are truncated; sizes of live firms never carry any.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite() && x.abs() < 4.0e18, "value out of exact range: {x}");
        ExactSum((x * SCALE) as i128)
    }

    pub fn to_f64(self) -> f64 {
        // i128 -> f64 rounds once; dividing by a power of two is exact.
        self.0 as f64 / SCALE
    }

    pub fn raw(self) -> i128 {
        self.0
    }
}

impl From<f64> for ExactSum {
    fn from(x: f64) -> Self {
        ExactSum::from_f64(x)
    }
}

impl Add for ExactSum {
    type Output = ExactSum;
    fn add(self, rhs: ExactSum) -> ExactSum {
        ExactSum(self.0 + rhs.0)
    }
}

impl Sub for ExactSum {
    type Output = ExactSum;
    fn sub(self, rhs: ExactSum) -> ExactSum {
        ExactSum(self.0 - rhs.0)
    }
}

impl Neg for ExactSum {
    type Output = ExactSum;
    fn neg(self) -> ExactSum {
        ExactSum(-self.0)
    }
}

impl AddAssign for ExactSum {
    fn add_assign(&mut self, rhs: ExactSum) {
        self.0 += rhs.0;
    }
}

impl SubAssign for ExactSum {
    fn sub_assign(&mut self, rhs: ExactSum) {
        self.0 -= rhs.0;
    }
}

impl Sum for ExactSum {
    fn sum<I: Iterator<Item = ExactSum>>(iter: I) -> ExactSum {
        iter.fold(ExactSum::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a f64> for ExactSum {
    fn sum<I: Iterator<Item = &'a f64>>(iter: I) -> ExactSum {
        iter.map(|&x| ExactSum::from_f64(x)).sum()
    }
}
