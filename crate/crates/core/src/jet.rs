//! Second-order univariate Taylor jets.
//!
//! Kinematic and dynamic functions in this crate are written once, generic
//! over [`Real`], and evaluated either on plain `f64` or on [`Jet`]s. A jet
//! seeded along a direction `v` at a point `q` carries the value, the first
//! directional derivative `∇f·v` and the second directional derivative
//! `vᵀ∇²f v`. Seeding along unit vectors yields Jacobian columns; seeding
//! along a velocity yields the velocity-product terms (`J̇ q̇`) needed by the
//! equations of motion and the task-space output maps.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar field used by the generic model code.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Truncated Taylor expansion `f(t) = v + d·t + dd·t²/2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub const fn new(v: f64, d: f64, dd: f64) -> Self {
        Self { v, d, dd }
    }

    /// Independent variable with unit-free first derivative `d`.
    pub const fn var(v: f64, d: f64) -> Self {
        Self { v, d, dd: 0.0 }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d: 0.0, dd: 0.0 }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d + o.d, self.dd + o.dd)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d - o.d, self.dd - o.dd)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.v * o.v,
            self.d * o.v + self.v * o.d,
            self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        )
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let c = self.v / o.v;
        let cd = (self.d - c * o.d) / o.v;
        let cdd = (self.dd - 2.0 * cd * o.d - c * o.dd) / o.v;
        Jet::new(c, cd, cdd)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::new(-self.v, -self.d, -self.dd)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, o: Jet) {
        *self = *self + o;
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, o: Jet) {
        *self = *self - o;
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, o: Jet) {
        *self = *self * o;
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, o: f64) -> Jet {
        Jet::new(self.v + o, self.d, self.dd)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, o: f64) -> Jet {
        Jet::new(self.v - o, self.d, self.dd)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, o: f64) -> Jet {
        Jet::new(self.v * o, self.d * o, self.dd * o)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, o: f64) -> Jet {
        Jet::new(self.v / o, self.d / o, self.dd / o)
    }
}

impl Real for Jet {
    fn cst(v: f64) -> Self {
        Jet::constant(v)
    }

    fn value(self) -> f64 {
        self.v
    }

    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet::new(s, c * self.d, c * self.dd - s * self.d * self.d)
    }

    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet::new(c, -s * self.d, -s * self.dd - c * self.d * self.d)
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let sd = self.d / (2.0 * s);
        let sdd = (self.dd - 2.0 * sd * sd) / (2.0 * s);
        Jet::new(s, sd, sdd)
    }

    fn atan2(self, x: Self) -> Self {
        let y = self;
        let den = x.v * x.v + y.v * y.v;
        let num = x.v * y.d - y.v * x.d;
        let num_d = x.v * y.dd - y.v * x.dd;
        let den_d = 2.0 * (x.v * x.d + y.v * y.d);
        Jet::new(
            y.v.atan2(x.v),
            num / den,
            (num_d * den - num * den_d) / (den * den),
        )
    }
}

/// Value, gradient and Hessian of a scalar function `f: Rⁿ → R` at `x`,
/// computed from `n(n+1)/2` jet evaluations (diagonal directions plus
/// polarization along `eᵢ + eⱼ`).
pub fn gradient_hessian<F>(f: F, x: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>)
where
    F: Fn(&[Jet]) -> Jet,
{
    let n = x.len();
    let mut seed = vec![Jet::default(); n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![vec![0.0; n]; n];
    let mut value = 0.0;
    for i in 0..n {
        for (k, s) in seed.iter_mut().enumerate() {
            *s = Jet::var(x[k], if k == i { 1.0 } else { 0.0 });
        }
        let out = f(&seed);
        value = out.v;
        grad[i] = out.d;
        hess[i][i] = out.dd;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for (k, s) in seed.iter_mut().enumerate() {
                let d = if k == i || k == j { 1.0 } else { 0.0 };
                *s = Jet::var(x[k], d);
            }
            let out = f(&seed);
            let h = 0.5 * (out.dd - hess[i][i] - hess[j][j]);
            hess[i][j] = h;
            hess[j][i] = h;
        }
    }
    (value, grad, hess)
}

/// Value and Jacobian of a vector function `f: Rⁿ → Rᵐ` (one jet pass per input).
pub fn jacobian<F>(f: F, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>)
where
    F: Fn(&[Jet]) -> Vec<Jet>,
{
    let n = x.len();
    let mut seed: Vec<Jet> = x.iter().map(|&v| Jet::constant(v)).collect();
    let mut values = Vec::new();
    let mut jac: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        seed[i].d = 1.0;
        let out = f(&seed);
        seed[i].d = 0.0;
        if i == 0 {
            values = out.iter().map(|o| o.v).collect();
            jac = vec![vec![0.0; n]; out.len()];
        }
        for (row, o) in jac.iter_mut().zip(&out) {
            row[i] = o.d;
        }
    }
    if n == 0 {
        values = f(&seed).iter().map(|o| o.v).collect();
    }
    (values, jac)
}
