//! Flywheel SLIP template: a point mass on a springy, length-actuated leg with
//! an actuated ankle moment and a flywheel at the mass.
//!
//! Angles follow one convention throughout the crate: positive rotation moves
//! the top of an upright body toward `+x`. The leg angle `β` is measured from
//! the vertical through the foot and is positive when the mass is ahead of the
//! foot.

mod dynamics;
mod regression;

pub(crate) use dynamics::stance_terms;
pub use dynamics::{
    flight_dynamics, ground_reaction, leg_geometry, spring_force, stance_dynamics, GroundReaction,
    LegGeometry,
};
pub use regression::{eval_regression, fit_regression, RegressionFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::Real;

/// Floor below which the leg is considered collapsed.
pub const MIN_LEG_LENGTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FslipError {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("degenerate leg geometry: r = {0:e} m")]
    DegenerateGeometry(f64),
    #[error("mass is not above the foot (dz = {0})")]
    MassBelowFoot(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("regression fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, FslipError>;

/// Template-model parameters.
///
/// Polynomials are ascending-degree coefficient arrays over the actuated leg
/// length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FslipParams {
    pub mass: f64,
    pub gravity: f64,
    pub stiffness_poly: Vec<f64>,
    pub damping_poly: Vec<f64>,
    pub inertia_poly: Vec<f64>,
    pub foot_length: f64,
    pub friction_mu: f64,
    pub leg_length_bounds: [f64; 2],
    /// Bound on |L̈| (m/s²).
    pub leg_accel_bound: f64,
    /// Bound on |u| (N·m).
    pub foot_moment_bound: f64,
    /// Bound on |τ| (N·m).
    pub flywheel_torque_bound: f64,
}

impl FslipParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FslipError::InvalidParams(m));
        if !(self.mass > 0.0) {
            return bad(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.gravity > 0.0) {
            return bad(format!("gravity must be positive, got {}", self.gravity));
        }
        if !(self.foot_length > 0.0) {
            return bad(format!(
                "foot length must be positive, got {}",
                self.foot_length
            ));
        }
        if !(self.friction_mu > 0.0) {
            return bad(format!(
                "friction must be positive, got {}",
                self.friction_mu
            ));
        }
        let [lo, hi] = self.leg_length_bounds;
        if !(lo < hi) || lo <= 0.0 {
            return bad(format!(
                "leg length bounds [{lo}, {hi}] are not an interval"
            ));
        }
        for (name, b) in [
            ("leg acceleration", self.leg_accel_bound),
            ("foot moment", self.foot_moment_bound),
            ("flywheel torque", self.flywheel_torque_bound),
        ] {
            if !(b > 0.0) {
                return bad(format!("{name} bound must be positive, got {b}"));
            }
        }
        if self.stiffness_poly.is_empty()
            || self.damping_poly.is_empty()
            || self.inertia_poly.is_empty()
        {
            return bad("regression polynomials must be non-empty".into());
        }
        for i in 0..=200 {
            let l = lo + (hi - lo) * i as f64 / 200.0;
            if self.stiffness_unchecked(l) <= 0.0 {
                return bad(format!("K({l}) is not positive"));
            }
            if self.inertia_unchecked(l) <= 0.0 {
                return bad(format!("I({l}) is not positive"));
            }
            if self.damping_unchecked(l) < 0.0 {
                return bad(format!("D({l}) is negative"));
            }
        }
        Ok(())
    }

    pub fn check_leg_length(&self, l: f64) -> Result<()> {
        let [lo, hi] = self.leg_length_bounds;
        // Small slack so solver iterates sitting on a bound are accepted.
        let tol = 1e-9 * (hi - lo);
        if l.is_finite() && l >= lo - tol && l <= hi + tol {
            Ok(())
        } else {
            Err(FslipError::OutOfDomain {
                what: "leg length",
                value: l,
                lo,
                hi,
            })
        }
    }

    pub fn stiffness(&self, l: f64) -> Result<f64> {
        eval_regression(&self.stiffness_poly, l, self.leg_length_bounds)
    }

    pub fn damping(&self, l: f64) -> Result<f64> {
        eval_regression(&self.damping_poly, l, self.leg_length_bounds)
    }

    pub fn inertia(&self, l: f64) -> Result<f64> {
        eval_regression(&self.inertia_poly, l, self.leg_length_bounds)
    }

    pub(crate) fn stiffness_unchecked<T: Real>(&self, l: T) -> T {
        horner(&self.stiffness_poly, l)
    }

    pub(crate) fn damping_unchecked<T: Real>(&self, l: T) -> T {
        horner(&self.damping_poly, l)
    }

    pub(crate) fn inertia_unchecked<T: Real>(&self, l: T) -> T {
        horner(&self.inertia_poly, l)
    }

    /// dI/dL.
    pub(crate) fn inertia_slope_unchecked<T: Real>(&self, l: T) -> T {
        horner_derivative(&self.inertia_poly, l)
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }
}

pub(crate) fn horner<T: Real>(coeffs: &[f64], x: T) -> T {
    let mut acc = T::zero();
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

pub(crate) fn horner_derivative<T: Real>(coeffs: &[f64], x: T) -> T {
    let mut acc = T::zero();
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + c * k as f64;
    }
    acc
}

/// Template state. The spring deflection `s = L − r` is derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FslipState {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub leg_length: f64,
    pub xdot: f64,
    pub zdot: f64,
    pub thetadot: f64,
    pub leg_rate: f64,
    /// Horizontal foot anchor (the foot sits on `z = 0`).
    pub foot_x: f64,
}

impl FslipState {
    pub const DIM: usize = 8;

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.x,
            self.z,
            self.theta,
            self.leg_length,
            self.xdot,
            self.zdot,
            self.thetadot,
            self.leg_rate,
        ]
    }

    pub fn from_array(a: &[f64], foot_x: f64) -> Self {
        Self {
            x: a[0],
            z: a[1],
            theta: a[2],
            leg_length: a[3],
            xdot: a[4],
            zdot: a[5],
            thetadot: a[6],
            leg_rate: a[7],
            foot_x,
        }
    }

    /// Static standing on a vertical leg of actuated length `l`:
    /// the spring carries the weight, `K(l)·s = m g`.
    pub fn standing(params: &FslipParams, l: f64) -> Result<Self> {
        let k = params.stiffness(l)?;
        let s = params.weight() / k;
        Ok(Self {
            z: l - s,
            leg_length: l,
            ..Default::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FslipControl {
    /// L̈ (m/s²).
    pub leg_accel: f64,
    /// u (N·m).
    pub foot_moment: f64,
    /// τ (N·m).
    pub flywheel_torque: f64,
}

impl FslipControl {
    pub fn check_bounds(&self, params: &FslipParams) -> Result<()> {
        for (what, v, b) in [
            ("leg acceleration", self.leg_accel, params.leg_accel_bound),
            ("foot moment", self.foot_moment, params.foot_moment_bound),
            (
                "flywheel torque",
                self.flywheel_torque,
                params.flywheel_torque_bound,
            ),
        ] {
            if !(v.abs() <= b * (1.0 + 1e-9)) {
                return Err(FslipError::OutOfDomain {
                    what,
                    value: v,
                    lo: -b,
                    hi: b,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_params {
    use super::FslipParams;

    /// Constant-coefficient parameter set for unit tests.
    pub fn constant(k: f64, d: f64, i: f64) -> FslipParams {
        FslipParams {
            mass: 33.0,
            gravity: 9.81,
            stiffness_poly: vec![k],
            damping_poly: vec![d],
            inertia_poly: vec![i],
            foot_length: 0.18,
            friction_mu: 0.6,
            leg_length_bounds: [0.6, 1.0],
            leg_accel_bound: 40.0,
            foot_moment_bound: 60.0,
            flywheel_torque_bound: 195.0,
        }
    }

    pub fn quadratic() -> FslipParams {
        FslipParams {
            stiffness_poly: vec![16000.0, -14000.0, 5000.0],
            damping_poly: vec![120.0, -40.0, 10.0],
            inertia_poly: vec![0.4, 1.2, 0.9],
            ..constant(1.0, 0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_params::*;
    use super::*;

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(quadratic().validate().is_ok());
        let mut p = quadratic();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = quadratic();
        p.leg_length_bounds = [1.0, 0.6];
        assert!(p.validate().is_err());
        let mut p = quadratic();
        p.stiffness_poly = vec![-1.0];
        assert!(p.validate().is_err());
        let mut p = quadratic();
        p.damping_poly = vec![-0.1];
        assert!(p.validate().is_err());
    }

    #[test]
    fn standing_state_balances_weight() {
        let p = quadratic();
        let s = FslipState::standing(&p, 0.8).unwrap();
        let f = spring_force(&p, 0.8, s.leg_length - s.z, 0.0).unwrap();
        assert!((f - p.weight()).abs() < 1e-9);
    }

    #[test]
    fn horner_derivative_matches_difference() {
        let c = [0.4, 1.2, 0.9, -0.3];
        let h = 1e-6;
        let d = (horner(&c, 0.8 + h) - horner(&c, 0.8 - h)) / (2.0 * h);
        assert!((horner_derivative(&c, 0.8) - d).abs() < 1e-8);
    }

    #[test]
    fn params_json_roundtrip() {
        let p = quadratic();
        let s = serde_json::to_string(&p).unwrap();
        let back: FslipParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
