//! Tiny forward-mode differentiation for the closed-form score expressions.
//!
//! The parametric models only ever need derivatives with respect to a
//! distribution's `(mu, log sigma)` pair, so a fixed two-partial dual number
//! is enough. Score formulas are written once, generically over [`Scalar`],
//! and evaluated with `f64` on the fast path and [`Dual2`] when gradients
//! are required.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::special;

/// Arithmetic shared by `f64` and [`Dual2`]: the closed-form scores are
/// generic over this.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn norm_cdf(self) -> Self;
    fn norm_pdf(self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn norm_cdf(self) -> Self {
        special::norm_cdf(self)
    }
    fn norm_pdf(self) -> Self {
        special::norm_pdf(self)
    }
}

/// Value plus two partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d0: f64,
    pub d1: f64,
}

impl Dual2 {
    pub fn new(v: f64, d0: f64, d1: f64) -> Self {
        Self { v, d0, d1 }
    }

    /// Seed for the first differentiation variable.
    pub fn var0(v: f64) -> Self {
        Self { v, d0: 1.0, d1: 0.0 }
    }

    /// Seed for the second differentiation variable.
    pub fn var1(v: f64) -> Self {
        Self { v, d0: 0.0, d1: 1.0 }
    }

    pub fn grad(self) -> [f64; 2] {
        [self.d0, self.d1]
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Self { v, d0: dv * self.d0, d1: dv * self.d1 }
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d0: self.d0 + o.d0, d1: self.d1 + o.d1 }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d0: self.d0 - o.d0, d1: self.d1 - o.d1 }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d0: self.d0 * o.v + self.v * o.d0,
            d1: self.d1 * o.v + self.v * o.d1,
        }
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        Self {
            v,
            d0: (self.d0 - v * o.d0) * inv,
            d1: (self.d1 - v * o.d1) * inv,
        }
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d0: -self.d0, d1: -self.d1 }
    }
}

impl Scalar for Dual2 {
    fn constant(v: f64) -> Self {
        Self { v, d0: 0.0, d1: 0.0 }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn norm_cdf(self) -> Self {
        self.chain(special::norm_cdf(self.v), special::norm_pdf(self.v))
    }
    fn norm_pdf(self) -> Self {
        let p = special::norm_pdf(self.v);
        self.chain(p, -self.v * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dual_matches_finite_differences() {
        // g(x) = exp(x) * norm_cdf(x) / (1 + x^2) - ln(2 + x)
        let g = |x: f64| x.exp() * special::norm_cdf(x) / (1.0 + x * x) - (2.0 + x).ln();
        let gd = |x: Dual2| {
            x.exp() * x.norm_cdf() / (Dual2::constant(1.0) + x * x)
                - (Dual2::constant(2.0) + x).ln()
        };
        for &x in &[-1.5, -0.3, 0.0, 0.7, 2.2] {
            let d = gd(Dual2::var0(x));
            assert!((d.v - g(x)).abs() < 1e-14);
            let want = fd(g, x);
            assert!(
                (d.d0 - want).abs() <= 1e-5 * (1.0 + want.abs()),
                "x={x}: dual {} vs fd {want}",
                d.d0
            );
            assert_eq!(d.d1, 0.0);
        }
    }

    #[test]
    fn norm_pdf_derivative() {
        let d = Dual2::var1(0.8).norm_pdf();
        let want = fd(special::norm_pdf, 0.8);
        assert!((d.d1 - want).abs() < 1e-9);
        assert_eq!(d.d0, 0.0);
    }
}
