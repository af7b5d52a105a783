//! Arithmetic backends for risk-set accumulation.
//!
//! [`DoubleDouble`] carries an unevaluated sum `hi + lo` built from error-free
//! transformations (TwoSum, FMA-based TwoProduct), giving about 106 bits of
//! significand. It is the extended precision mode of the Cox fitter; plain
//! `f64` is the standard mode. Both implement [`RiskScalar`], the small set
//! of operations the likelihood sweep needs.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    #[default]
    Standard,
    Extended,
}

impl std::str::FromStr for PrecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(PrecisionMode::Standard),
            "extended" => Ok(PrecisionMode::Extended),
            other => Err(format!("unknown precision mode `{other}` (expected standard or extended)")),
        }
    }
}

impl std::fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrecisionMode::Standard => "standard",
            PrecisionMode::Extended => "extended",
        })
    }
}

pub trait RiskScalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn mul_f64(self, x: f64) -> Self;
    fn div(self, other: Self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    /// Σ aᵢ bᵢ with the backend's accumulation precision.
    fn dot(a: &[f64], b: &[f64]) -> Self {
        a.iter()
            .zip(b)
            .fold(Self::zero(), |acc, (&x, &y)| acc + Self::from_f64(x).mul_f64(y))
    }
}

impl RiskScalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn mul_f64(self, x: f64) -> Self {
        self * x
    }
    fn div(self, other: Self) -> Self {
        self / other
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }

    fn renormalized(hi: f64, lo: f64) -> Self {
        let (h, l) = quick_two_sum(hi, lo);
        DoubleDouble { hi: h, lo: l }
    }

    fn scale_pow2(self, k: i32) -> Self {
        // split the exponent so neither factor over- or underflows on its own
        let half = k / 2;
        let a = 2f64.powi(half);
        let b = 2f64.powi(k - half);
        DoubleDouble {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        DoubleDouble::renormalized(s1, s2 + t2)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble::new(-self.hi, -self.lo)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        DoubleDouble::renormalized(p, e)
    }
}

impl RiskScalar for DoubleDouble {
    fn from_f64(x: f64) -> Self {
        DoubleDouble::new(x, 0.0)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_f64(self, x: f64) -> Self {
        let (p, e) = two_prod(self.hi, x);
        DoubleDouble::renormalized(p, e + self.lo * x)
    }

    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        DoubleDouble::new(q1, q2) + DoubleDouble::from_f64(q3)
    }

    fn exp(self) -> Self {
        if self.hi > 709.78 {
            return DoubleDouble::from_f64(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return DoubleDouble::zero();
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return DoubleDouble::from_f64(1.0);
        }
        // x = k ln2 + r, then e^r = (e^{r/1024})^1024 via s ↦ s(s+2) on s = e^t - 1
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.mul_f64(k);
        let t = r.mul_f64(1.0 / 1024.0);
        let mut term = t;
        let mut s = t;
        for i in 2..=12 {
            term = (term * t).div(DoubleDouble::from_f64(f64::from(i)));
            s = s + term;
            if term.hi.abs() < 1e-34 {
                break;
            }
        }
        for _ in 0..10 {
            s = s * (s + DoubleDouble::from_f64(2.0));
        }
        (s + DoubleDouble::from_f64(1.0)).scale_pow2(k as i32)
    }

    fn ln(self) -> Self {
        // one Newton step on e^y = x from the double estimate doubles the precision
        let y = DoubleDouble::from_f64(self.hi.ln());
        let ey = y.exp();
        y + (self - ey).div(ey)
    }
}
