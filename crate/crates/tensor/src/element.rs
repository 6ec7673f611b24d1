use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar element of a tensor. Implemented for `f32` (training math) and
/// `f64` (reference mode for gradient checks).
pub trait Element:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;

    fn exp(self) -> Self {
        Self::from_f64(self.to_f64().exp())
    }
    fn ln(self) -> Self {
        Self::from_f64(self.to_f64().ln())
    }
    fn sqrt(self) -> Self {
        Self::from_f64(self.to_f64().sqrt())
    }
    fn abs(self) -> Self {
        if self < Self::ZERO {
            -self
        } else {
            self
        }
    }
    fn max_e(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    fn min_e(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Error function, evaluated in f64 on both encode and decode paths.
///
/// Maclaurin series for |x| <= 4 (alternating, peak term ~1e5 at x=4, so the
/// f64 sum is good to ~1e-11 absolute), asymptotic erfc expansion beyond,
/// where erfc(4) < 1.6e-8 bounds the absolute error. Total |error| < 1e-9,
/// well inside what the 16-bit frequency quantization can resolve.
pub fn erf64(x: f64) -> f64 {
    if x < 0.0 {
        return -erf64(-x);
    }
    if x <= 4.0 {
        // erf(x) = 2/sqrt(pi) * sum_{n>=0} (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = x * x;
        let mut term = x;
        let mut sum = 0.0;
        let mut n = 0u32;
        loop {
            sum += term / (2 * n + 1) as f64;
            n += 1;
            term *= -x2 / n as f64;
            if term.abs() < 1e-18 || n > 200 {
                break;
            }
        }
        (2.0 / std::f64::consts::PI.sqrt()) * sum
    } else {
        // erfc(x) ~ exp(-x^2)/(x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6))
        let x2 = x * x;
        let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
        let erfc = (-x2).exp() / (x * std::f64::consts::PI.sqrt()) * series;
        1.0 - erfc
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf64(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
