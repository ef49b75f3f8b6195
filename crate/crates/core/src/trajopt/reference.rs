//! Time-indexed references extracted from a solved phase.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::solution::NlpSolution;
use super::transcription::PhaseKind;
use super::{Result, TrajoptError};
use crate::fslip::{leg_geometry, FslipParams};

/// Behavior past the last node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extrapolation {
    /// Continue with the final rate.
    Linear,
    /// Freeze at the final value.
    Hold,
}

/// Planned lift-off conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftOffPlan {
    pub time: f64,
    pub flight_time: f64,
    pub com_x: f64,
    pub com_z: f64,
    pub com_xdot: f64,
    pub com_zdot: f64,
    pub leg_angle: f64,
    pub leg_length: f64,
    pub pitch_rate: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub leg_length: f64,
    pub leg_rate: f64,
    pub leg_accel: f64,
    pub com_x: f64,
    pub com_xdot: f64,
    pub com_xddot: f64,
    pub momentum: f64,
    pub momentum_rate: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub pitch_accel: f64,
}

/// Knot values and slopes of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl Channel {
    /// Value, first and second derivative of the cubic Hermite interpolant.
    fn eval(&self, times: &[f64], t: f64, extrapolation: Extrapolation) -> (f64, f64, f64) {
        let n = times.len();
        if t <= times[0] {
            return (self.values[0], 0.0, 0.0);
        }
        if t >= times[n - 1] {
            let (v, m) = (self.values[n - 1], self.slopes[n - 1]);
            return match extrapolation {
                Extrapolation::Linear => (v + m * (t - times[n - 1]), m, 0.0),
                Extrapolation::Hold => (v, 0.0, 0.0),
            };
        }
        let k = match times.binary_search_by(|a| a.total_cmp(&t)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k - 1,
        };
        let h = times[k + 1] - times[k];
        let s = (t - times[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        let d = (6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * m1;
        let dd = (12.0 * s - 6.0) * y0
            + (6.0 * s - 4.0) * m0
            + (-12.0 * s + 6.0) * y1
            + (6.0 * s - 2.0) * m1;
        (v, d / h, dd / (h * h))
    }
}

/// Cubic-Hermite references: actuated leg length `L`, COM abscissa `x`,
/// pitch momentum `H = I(L)·θ̇` and pelvis pitch (the leg angle `β`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBundle {
    pub kind: PhaseKind,
    pub times: Vec<f64>,
    pub leg_length: Channel,
    pub com_x: Channel,
    pub momentum: Channel,
    pub pitch: Channel,
    pub foot_x: f64,
    pub extrapolation: Extrapolation,
    pub lift_off: Option<LiftOffPlan>,
    /// Set when the bundle is a fallback rather than an optimized plan.
    #[serde(default)]
    pub fallback: bool,
}

impl ReferenceBundle {
    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn sample(&self, t: f64) -> ReferenceSample {
        let e = self.extrapolation;
        let (l, ld, ldd) = self.leg_length.eval(&self.times, t, e);
        let (x, xd, xdd) = self.com_x.eval(&self.times, t, e);
        let (h, hd, _) = self.momentum.eval(&self.times, t, e);
        let (p, pd, pdd) = self.pitch.eval(&self.times, t, e);
        ReferenceSample {
            leg_length: l,
            leg_rate: ld,
            leg_accel: ldd,
            com_x: x,
            com_xdot: xd,
            com_xddot: xdd,
            momentum: h,
            momentum_rate: hd,
            pitch: p,
            pitch_rate: pd,
            pitch_accel: pdd,
        }
    }

    /// Constant stance reference (used when no plan is available).
    pub fn hold(kind: PhaseKind, leg_length: f64, com_x: f64, foot_x: f64) -> Self {
        let c = |v: f64| Channel {
            values: vec![v, v],
            slopes: vec![0.0, 0.0],
        };
        Self {
            kind,
            times: vec![0.0, 1.0],
            leg_length: c(leg_length),
            com_x: c(com_x),
            momentum: c(0.0),
            pitch: c(0.0),
            foot_x,
            extrapolation: Extrapolation::Hold,
            lift_off: None,
            fallback: true,
        }
    }

    /// CSV `t,L,x,H,pitch` sampled every `dt` seconds over the plan.
    pub fn to_csv(&self, dt: f64) -> String {
        let mut out = String::from("t,L,x,H,pitch\n");
        let steps = (self.duration() / dt).round() as usize;
        for i in 0..=steps {
            let t = (i as f64 * dt).min(self.duration());
            let s = self.sample(t);
            let _ = writeln!(
                out,
                "{t:.6},{:.9},{:.9},{:.9},{:.9}",
                s.leg_length, s.com_x, s.momentum, s.pitch
            );
        }
        out
    }
}

/// Builds the reference bundle of a converged solution.
pub fn extract_reference(sol: &NlpSolution, params: &FslipParams) -> Result<ReferenceBundle> {
    if !sol.converged() {
        return Err(TrajoptError::NotConverged {
            status: format!("{:?}", sol.status),
            worst: sol.worst_violations.clone(),
        });
    }
    let times = sol.node_times();
    let mut l = Channel {
        values: vec![],
        slopes: vec![],
    };
    let mut x = l.clone();
    let mut h = l.clone();
    let mut p = l.clone();
    for (s, c) in sol.states.iter().zip(&sol.controls) {
        let geo = leg_geometry(s)?;
        l.values.push(s.leg_length);
        l.slopes.push(s.leg_rate);
        x.values.push(s.x);
        x.slopes.push(s.xdot);
        h.values.push(params.inertia(s.leg_length)? * s.thetadot);
        h.slopes.push(c.flywheel_torque);
        p.values.push(geo.beta);
        p.slopes.push(geo.betadot);
    }
    let lift_off = match (sol.kind, sol.flight_time) {
        (PhaseKind::Jumping, Some(flight_time)) => {
            let s = sol.states[sol.states.len() - 1];
            let geo = leg_geometry(&s)?;
            Some(LiftOffPlan {
                time: sol.duration,
                flight_time,
                com_x: s.x,
                com_z: s.z,
                com_xdot: s.xdot,
                com_zdot: s.zdot,
                leg_angle: geo.beta,
                leg_length: s.leg_length,
                pitch_rate: s.thetadot,
                momentum: params.inertia(s.leg_length)? * s.thetadot,
            })
        }
        _ => None,
    };
    Ok(ReferenceBundle {
        kind: sol.kind,
        times,
        leg_length: l,
        com_x: x,
        momentum: h,
        pitch: p,
        foot_x: sol.foot_x,
        extrapolation: match sol.kind {
            PhaseKind::Jumping => Extrapolation::Linear,
            PhaseKind::Landing => Extrapolation::Hold,
        },
        lift_off,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |t: f64| 1.0 + 2.0 * t - 0.5 * t * t + 0.3 * t * t * t;
        let df = |t: f64| 2.0 - t + 0.9 * t * t;
        let times = vec![0.0, 0.4, 1.0];
        let ch = Channel {
            values: times.iter().map(|&t| f(t)).collect(),
            slopes: times.iter().map(|&t| df(t)).collect(),
        };
        for t in [0.1, 0.4, 0.77] {
            let (v, d, dd) = ch.eval(&times, t, Extrapolation::Hold);
            assert!((v - f(t)).abs() < 1e-12);
            assert!((d - df(t)).abs() < 1e-11);
            assert!((dd - (-1.0 + 1.8 * t)).abs() < 1e-10);
        }
        let (v, d, _) = ch.eval(&times, 1.5, Extrapolation::Linear);
        assert!((v - (f(1.0) + 0.5 * df(1.0))).abs() < 1e-12 && (d - df(1.0)).abs() < 1e-12);
        assert_eq!(
            ch.eval(&times, 1.5, Extrapolation::Hold),
            (f(1.0), 0.0, 0.0)
        );
    }
}
