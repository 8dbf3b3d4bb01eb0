//! Second-order forward-mode automatic differentiation.
//!
//! A [`HyperDual`] carries a value together with the coefficients of two
//! nilpotent generators `e1`, `e2` (`e1^2 = e2^2 = 0`) and their product.
//! Seeding variable `x_i` with `d1 = 1` and variable `x_j` with `d2 = 1`
//! makes `d12` of the evaluated expression the exact mixed partial
//! `d2f/dx_i dx_j`, up to roundoff.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub fn new(re: f64, d1: f64, d2: f64, d12: f64) -> Self {
        HyperDual { re, d1, d2, d12 }
    }

    /// A constant: both derivative channels are zero.
    pub fn constant(re: f64) -> Self {
        HyperDual::new(re, 0.0, 0.0, 0.0)
    }

    /// A value seeded in the two derivative channels.
    pub fn seeded(re: f64, d1: f64, d2: f64) -> Self {
        HyperDual::new(re, d1, d2, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.d1.is_finite() && self.d2.is_finite() && self.d12.is_finite()
    }

    fn is_constant(&self) -> bool {
        self.d1 == 0.0 && self.d2 == 0.0 && self.d12 == 0.0
    }

    /// Chain rule through second order for a univariate map with value `g`,
    /// first derivative `g1` and second derivative `g2` at `self.re`.
    fn chain(self, g: f64, g1: f64, g2: f64) -> Self {
        HyperDual {
            re: g,
            d1: g1 * self.d1,
            d2: g1 * self.d2,
            d12: g1 * self.d12 + g2 * self.d1 * self.d2,
        }
    }

    /// Quotient with the real part computed as a plain IEEE division, so the
    /// real channel agrees bit for bit with `f64` evaluation of the same tree.
    fn div_raw(self, b: HyperDual) -> HyperDual {
        let re = self.re / b.re;
        let d1 = (self.d1 - re * b.d1) / b.re;
        let d2 = (self.d2 - re * b.d2) / b.re;
        let d12 = (self.d12 - re * b.d12 - d1 * b.d2 - d2 * b.d1) / b.re;
        HyperDual { re, d1, d2, d12 }
    }

    /// Integer power, valid for any base (including zero and negatives).
    fn powi_chain(self, p: i32) -> Self {
        let x = self.re;
        let g = x.powi(p);
        let g1 = if p == 0 { 0.0 } else { p as f64 * x.powi(p - 1) };
        let g2 = if p == 0 || p == 1 {
            0.0
        } else {
            (p as f64) * (p as f64 - 1.0) * x.powi(p - 2)
        };
        self.chain(g, g1, g2)
    }
}

impl Add for HyperDual {
    type Output = HyperDual;
    fn add(self, o: HyperDual) -> HyperDual {
        HyperDual::new(
            self.re + o.re,
            self.d1 + o.d1,
            self.d2 + o.d2,
            self.d12 + o.d12,
        )
    }
}

impl Sub for HyperDual {
    type Output = HyperDual;
    fn sub(self, o: HyperDual) -> HyperDual {
        HyperDual::new(
            self.re - o.re,
            self.d1 - o.d1,
            self.d2 - o.d2,
            self.d12 - o.d12,
        )
    }
}

impl Mul for HyperDual {
    type Output = HyperDual;
    fn mul(self, o: HyperDual) -> HyperDual {
        HyperDual::new(
            self.re * o.re,
            self.re * o.d1 + self.d1 * o.re,
            self.re * o.d2 + self.d2 * o.re,
            self.re * o.d12 + self.d12 * o.re + self.d1 * o.d2 + self.d2 * o.d1,
        )
    }
}

impl Neg for HyperDual {
    type Output = HyperDual;
    fn neg(self) -> HyperDual {
        HyperDual::new(-self.re, -self.d1, -self.d2, -self.d12)
    }
}

/// IEEE division, no domain check. Evaluation paths use [`Scalar::div`].
impl Div for HyperDual {
    type Output = HyperDual;
    fn div(self, o: HyperDual) -> HyperDual {
        self.div_raw(o)
    }
}

// Opaque libm wrappers shared by both Scalar impls. Keeping the calls out of
// line stops LLVM from pairing a sin and cos of the same argument into a
// sincos call in one impl but not the other, which would break the exact
// real-channel agreement between f64 and HyperDual evaluation.
#[inline(never)]
fn libm_sin(x: f64) -> f64 {
    x.sin()
}
#[inline(never)]
fn libm_cos(x: f64) -> f64 {
    x.cos()
}
#[inline(never)]
fn libm_tan(x: f64) -> f64 {
    x.tan()
}
#[inline(never)]
fn libm_exp(x: f64) -> f64 {
    x.exp()
}
#[inline(never)]
fn libm_ln(x: f64) -> f64 {
    x.ln()
}
#[inline(never)]
fn libm_powf(x: f64, p: f64) -> f64 {
    x.powf(p)
}

/// Evaluation scalar: the expression evaluator is generic over this trait so
/// that one tree walk serves both plain values and derivative-carrying values.
pub trait Scalar: Copy + Sized {
    fn from_real(x: f64) -> Self;
    fn real(self) -> f64;
    fn finite(self) -> bool;

    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn div(self, o: Self) -> Result<Self>;
    fn pow(self, o: Self) -> Result<Self>;

    fn sin(self) -> Result<Self>;
    fn cos(self) -> Result<Self>;
    fn tan(self) -> Result<Self>;
    fn exp(self) -> Result<Self>;
    fn ln(self) -> Result<Self>;
    fn sqrt(self) -> Result<Self>;
}

impl Scalar for f64 {
    fn from_real(x: f64) -> Self {
        x
    }
    fn real(self) -> f64 {
        self
    }
    fn finite(self) -> bool {
        self.is_finite()
    }

    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn neg(self) -> Self {
        -self
    }

    fn div(self, o: Self) -> Result<Self> {
        if o == 0.0 {
            return Err(Error::DivisionByZero(self));
        }
        Ok(self / o)
    }

    fn pow(self, o: Self) -> Result<Self> {
        real_pow(self, o)
    }

    fn sin(self) -> Result<Self> {
        Ok(libm_sin(self))
    }
    fn cos(self) -> Result<Self> {
        Ok(libm_cos(self))
    }
    fn tan(self) -> Result<Self> {
        if libm_cos(self) == 0.0 {
            return Err(Error::TanDomain(self));
        }
        Ok(libm_tan(self))
    }
    fn exp(self) -> Result<Self> {
        Ok(libm_exp(self))
    }
    fn ln(self) -> Result<Self> {
        if self <= 0.0 {
            return Err(Error::LogDomain(self));
        }
        Ok(libm_ln(self))
    }
    fn sqrt(self) -> Result<Self> {
        if self < 0.0 {
            return Err(Error::SqrtDomain(self));
        }
        Ok(self.sqrt())
    }
}

fn real_pow(base: f64, exponent: f64) -> Result<f64> {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        if base == 0.0 && exponent < 0.0 {
            return Err(Error::DivisionByZero(base));
        }
        return Ok(base.powi(exponent as i32));
    }
    if base <= 0.0 {
        return Err(Error::PowDomain { base, exponent });
    }
    Ok(libm_powf(base, exponent))
}

impl Scalar for HyperDual {
    fn from_real(x: f64) -> Self {
        HyperDual::constant(x)
    }
    fn real(self) -> f64 {
        self.re
    }
    fn finite(self) -> bool {
        self.is_finite()
    }

    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn neg(self) -> Self {
        -self
    }

    fn div(self, o: Self) -> Result<Self> {
        if o.re == 0.0 {
            return Err(Error::DivisionByZero(self.re));
        }
        Ok(self.div_raw(o))
    }

    fn pow(self, o: Self) -> Result<Self> {
        if o.is_constant() {
            let p = o.re;
            if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                let pi = p as i32;
                if self.re == 0.0 && pi < 0 {
                    return Err(Error::DivisionByZero(self.re));
                }
                return Ok(self.powi_chain(pi));
            }
            if self.re <= 0.0 {
                return Err(Error::PowDomain {
                    base: self.re,
                    exponent: p,
                });
            }
            let g = libm_powf(self.re, p);
            let g1 = p * libm_powf(self.re, p - 1.0);
            let g2 = p * (p - 1.0) * libm_powf(self.re, p - 2.0);
            return Ok(self.chain(g, g1, g2));
        }
        // Variable exponent: derivatives through exp(b ln a); the value keeps
        // the plain powf result so the real channel matches f64 evaluation.
        if self.re <= 0.0 {
            return Err(Error::PowDomain {
                base: self.re,
                exponent: o.re,
            });
        }
        let u = o * self.ln()?;
        let g = libm_powf(self.re, o.re);
        Ok(HyperDual {
            re: g,
            d1: g * u.d1,
            d2: g * u.d2,
            d12: g * (u.d12 + u.d1 * u.d2),
        })
    }

    fn sin(self) -> Result<Self> {
        let s = libm_sin(self.re);
        Ok(self.chain(s, libm_cos(self.re), -s))
    }
    fn cos(self) -> Result<Self> {
        let c = libm_cos(self.re);
        Ok(self.chain(c, -libm_sin(self.re), -c))
    }
    fn tan(self) -> Result<Self> {
        let c = libm_cos(self.re);
        if c == 0.0 {
            return Err(Error::TanDomain(self.re));
        }
        let t = libm_tan(self.re);
        let sec2 = 1.0 + t * t;
        Ok(self.chain(t, sec2, 2.0 * t * sec2))
    }
    fn exp(self) -> Result<Self> {
        let e = libm_exp(self.re);
        Ok(self.chain(e, e, e))
    }
    fn ln(self) -> Result<Self> {
        if self.re <= 0.0 {
            return Err(Error::LogDomain(self.re));
        }
        let inv = 1.0 / self.re;
        Ok(self.chain(libm_ln(self.re), inv, -inv * inv))
    }
    fn sqrt(self) -> Result<Self> {
        if self.re < 0.0 {
            return Err(Error::SqrtDomain(self.re));
        }
        if self.re == 0.0 {
            if self.is_constant() {
                return Ok(HyperDual::constant(0.0));
            }
            return Err(Error::SqrtDomain(self.re));
        }
        let s = self.re.sqrt();
        Ok(self.chain(s, 0.5 / s, -0.25 / (s * self.re)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hd(re: f64, d1: f64, d2: f64, d12: f64) -> HyperDual {
        HyperDual::new(re, d1, d2, d12)
    }

    #[test]
    fn square_first_derivative() {
        let x = hd(3.0, 1.0, 0.0, 0.0);
        assert_eq!(x * x, hd(9.0, 6.0, 0.0, 0.0));
    }

    #[test]
    fn cross_partial_of_product() {
        let x = hd(2.0, 1.0, 0.0, 0.0);
        let y = hd(5.0, 0.0, 1.0, 0.0);
        assert_eq!(x * y, hd(10.0, 5.0, 2.0, 1.0));
    }

    #[test]
    fn second_derivative_of_square() {
        let x = hd(1.0, 1.0, 1.0, 0.0);
        assert_eq!(x * x, hd(1.0, 2.0, 2.0, 2.0));
    }

    #[test]
    fn sin_at_zero() {
        let x = hd(0.0, 1.0, 0.0, 0.0);
        assert_eq!(x.sin().unwrap(), hd(0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn exp_at_zero() {
        let x = hd(0.0, 1.0, 1.0, 0.0);
        assert_eq!(x.exp().unwrap(), hd(1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn log_at_one() {
        let x = hd(1.0, 1.0, 1.0, 0.0);
        assert_eq!(x.ln().unwrap(), hd(0.0, 1.0, 1.0, -1.0));
    }

    #[test]
    fn division_by_zero_reports_value() {
        let a = hd(2.0, 1.0, 0.0, 0.0);
        let b = HyperDual::constant(0.0);
        assert!(matches!(
            Scalar::div(a, b),
            Err(Error::DivisionByZero(_))
        ));
    }

    #[test]
    fn integer_pow_on_negative_base() {
        let x = hd(-2.0, 1.0, 1.0, 0.0);
        let p = HyperDual::constant(3.0);
        let y = x.pow(p).unwrap();
        assert_eq!(y.re, -8.0);
        assert_eq!(y.d1, 12.0);
        assert_eq!(y.d12, -12.0);
    }

    #[test]
    fn fractional_pow_rejects_negative_base() {
        let x = hd(-2.0, 1.0, 0.0, 0.0);
        assert!(x.pow(HyperDual::constant(0.5)).is_err());
    }

    #[test]
    fn nilpotency_of_pure_seed() {
        // (e1)^2 = 0: squaring a pure epsilon-1 perturbation leaves only the
        // forced cross term from the two channels.
        let x = hd(0.0, 1.0, 0.0, 0.0);
        assert_eq!(x * x, hd(0.0, 0.0, 0.0, 0.0));
        let y = hd(0.0, 1.0, 1.0, 0.0);
        assert_eq!(y * y, hd(0.0, 0.0, 0.0, 2.0));
    }

    // Central-difference cross check of every builtin, matching how the
    // geometry layer consumes the type: d1 and d12 against steps of 1e-5.
    #[test]
    fn derivatives_match_finite_differences() {
        let funcs: Vec<(&str, fn(HyperDual) -> Result<HyperDual>, fn(f64) -> f64)> = vec![
            ("sin", |x| x.sin(), |x| x.sin()),
            ("cos", |x| x.cos(), |x| x.cos()),
            ("tan", |x| x.tan(), |x| x.tan()),
            ("exp", |x| x.exp(), |x| x.exp()),
            ("log", |x| x.ln(), |x| x.ln()),
            ("sqrt", |x| x.sqrt(), |x| x.sqrt()),
        ];
        let h = 1e-5;
        for (name, f, g) in funcs {
            for &x0 in &[0.3, 0.9, 1.7, 2.3] {
                let out = f(HyperDual::seeded(x0, 1.0, 1.0)).unwrap();
                let fd1 = (g(x0 + h) - g(x0 - h)) / (2.0 * h);
                let fd2 = (g(x0 + h) - 2.0 * g(x0) + g(x0 - h)) / (h * h);
                assert_relative_eq!(out.d1, fd1, max_relative = 1e-6, epsilon = 1e-9);
                assert_relative_eq!(out.d12, fd2, max_relative = 1e-4, epsilon = 1e-5);
                let _ = name;
            }
        }
    }
}
