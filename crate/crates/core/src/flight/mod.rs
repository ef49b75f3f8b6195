//! Flight-phase references: the pelvis rotation plan, the flywheel momentum
//! that realizes it, the leg tuck, and the touch-down leg placement.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{centroidal_momentum, virtual_leg, PlanarRobotModel, RobotState, PITCH};
use crate::trajopt::{lift_off_targets_with_drop, FlipDirection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlightError {
    #[error("invalid flight input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FlightError>;

fn invalid<T>(msg: String) -> Result<T> {
    Err(FlightError::Invalid(msg))
}

/// ω̄ = Σ I_i ω_i / Σ I_i.
pub fn average_lower_body_rate(inertias: &[f64], rates: &[f64]) -> Result<f64> {
    if inertias.is_empty() || inertias.len() != rates.len() {
        return invalid(format!(
            "{} inertias for {} rates",
            inertias.len(),
            rates.len()
        ));
    }
    if let Some(i) = inertias.iter().find(|&&i| !(i > 0.0)) {
        return invalid(format!("inertia {i} is not positive"));
    }
    let total: f64 = inertias.iter().sum();
    Ok(inertias.iter().zip(rates).map(|(i, w)| i * w).sum::<f64>() / total)
}

/// Cubic `θ(t) = c₀ + c₁t + c₂t² + c₃t³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cubic {
    pub coeffs: [f64; 4],
}

impl Cubic {
    pub fn value(&self, t: f64) -> f64 {
        let [a, b, c, d] = self.coeffs;
        a + t * (b + t * (c + t * d))
    }

    pub fn rate(&self, t: f64) -> f64 {
        let [_, b, c, d] = self.coeffs;
        b + t * (2.0 * c + 3.0 * d * t)
    }

    pub fn accel(&self, t: f64) -> f64 {
        let [_, _, c, d] = self.coeffs;
        2.0 * c + 6.0 * d * t
    }
}

/// Pelvis pitch plan from lift-off, `θ(0) = β_lo, θ̇(0) = ω̄_lo`, to the
/// mirrored leg angle one turn later, `θ(T) = ±2π − β_lo, θ̇(T) = 0`.
pub fn build_flip_reference(
    beta_lo: f64,
    omega_lo: f64,
    flight_time: f64,
    direction: f64,
) -> Result<Cubic> {
    if !(flight_time > 0.0) {
        return invalid(format!("flight time must be positive, got {flight_time}"));
    }
    let t = flight_time;
    let (y0, v0) = (beta_lo, omega_lo);
    let y1 = direction * 2.0 * PI - beta_lo;
    let c2 = (3.0 * (y1 - y0) - 2.0 * v0 * t) / (t * t);
    let c3 = (v0 * t - 2.0 * (y1 - y0)) / (t * t * t);
    Ok(Cubic {
        coeffs: [y0, v0, c2, c3],
    })
}

/// C¹ leg-length profile: retract over `[0, 0.3T]`, hold, extend over `[T₁, T]`.
pub fn tuck_profile(t: f64, flight_time: f64, t1: f64, l_lo: f64, l_min: f64) -> Result<f64> {
    Ok(tuck_profile_derivs(t, flight_time, t1, l_lo, l_min)?.0)
}

/// Tuck value, rate and acceleration.
pub fn tuck_profile_derivs(
    t: f64,
    flight_time: f64,
    t1: f64,
    l_lo: f64,
    l_min: f64,
) -> Result<(f64, f64, f64)> {
    let retract = 0.3 * flight_time;
    if !(l_min < l_lo) {
        return invalid(format!(
            "tuck length {l_min} is not below lift-off length {l_lo}"
        ));
    }
    if !(retract < t1 && t1 < flight_time) {
        return invalid(format!(
            "need 0.3·T < T1 < T, got T1 = {t1}, T = {flight_time}"
        ));
    }
    let t = t.clamp(0.0, flight_time);
    let depth = l_lo - l_min;
    // Smoothstep 3s² − 2s³ and its derivatives.
    let blend = |s: f64, span: f64| {
        (
            s * s * (3.0 - 2.0 * s),
            6.0 * s * (1.0 - s) / span,
            (6.0 - 12.0 * s) / (span * span),
        )
    };
    Ok(if t < retract {
        let (b, bd, bdd) = blend(t / retract, retract);
        (l_lo - depth * b, -depth * bd, -depth * bdd)
    } else if t < t1 {
        (l_min, 0.0, 0.0)
    } else {
        let span = flight_time - t1;
        let (b, bd, bdd) = blend((t - t1) / span, span);
        (l_min + depth * b, depth * bd, depth * bdd)
    })
}

/// Leg angle and toe pitch to land with.
pub fn landing_targets(beta_lo: f64) -> (f64, f64) {
    (-beta_lo, 0.0)
}

/// H_fw = H_pitch − θ̇_cl Σ I_i.
pub fn flywheel_momentum_target(h_pitch: f64, rate: f64, lower_inertia: f64) -> Result<f64> {
    if !(lower_inertia > 0.0) {
        return invalid(format!(
            "lower-body inertia must be positive, got {lower_inertia}"
        ));
    }
    Ok(h_pitch - rate * lower_inertia)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightOptions {
    /// Pitch feedback gain k_p (1/s).
    pub kp: f64,
    /// T₁ as a fraction of the flight time.
    pub landing_switch: f64,
    /// Tucked virtual leg length (m).
    pub tuck_length: f64,
    /// Re-evaluate Σ I_i every tick instead of freezing it at lift-off.
    pub reevaluate_inertia: bool,
}

impl Default for FlightOptions {
    fn default() -> Self {
        Self {
            kp: 5.0,
            landing_switch: 0.75,
            tuck_length: 0.65,
            reevaluate_inertia: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    pub flight_time: f64,
    pub direction: f64,
    pub theta: Cubic,
    pub kp: f64,
    /// Σ I_i at lift-off.
    pub lower_inertia: f64,
    pub h_pitch: f64,
    pub t1: f64,
    pub leg_length_lo: f64,
    pub tuck_length: f64,
    pub beta_lo: f64,
    pub reevaluate_inertia: bool,
}

impl FlightPlan {
    pub fn theta_des(&self, t: f64) -> f64 {
        self.theta.value(t.clamp(0.0, self.flight_time))
    }

    pub fn omega_bar_des(&self, t: f64) -> f64 {
        if t >= self.flight_time {
            return 0.0;
        }
        self.theta.rate(t.max(0.0))
    }

    pub fn omega_bar_accel(&self, t: f64) -> f64 {
        if t >= self.flight_time || t < 0.0 {
            return 0.0;
        }
        self.theta.accel(t)
    }

    pub fn leg_length(&self, t: f64) -> (f64, f64, f64) {
        tuck_profile_derivs(
            t,
            self.flight_time,
            self.t1,
            self.leg_length_lo,
            self.tuck_length,
        )
        .expect("validated at construction")
    }

    /// Nominal flywheel momentum with the pelvis on its plan.
    pub fn h_fw_nominal(&self, t: f64) -> f64 {
        self.h_pitch - self.omega_bar_des(t) * self.lower_inertia
    }

    /// CSV `t,theta_des,omega_bar_des,L_des,H_fw_des`.
    pub fn to_csv(&self, dt: f64) -> String {
        let mut out = String::from("t,theta_des,omega_bar_des,L_des,H_fw_des\n");
        let steps = (self.flight_time / dt).round() as usize;
        for i in 0..=steps {
            let t = (i as f64 * dt).min(self.flight_time);
            let _ = writeln!(
                out,
                "{t:.6},{:.9},{:.9},{:.9},{:.9}",
                self.theta_des(t),
                self.omega_bar_des(t),
                self.leg_length(t).0,
                self.h_fw_nominal(t)
            );
        }
        out
    }
}

/// θ̇_cl = ω̄_des − k_p (θ_pelvis − θ_des).
pub fn closed_loop_rate(t: f64, pitch: f64, plan: &FlightPlan) -> f64 {
    plan.omega_bar_des(t) - plan.kp * (pitch - plan.theta_des(t))
}

/// Time derivative of [`closed_loop_rate`] given the pelvis rate.
pub fn closed_loop_rate_derivative(t: f64, pitch_rate: f64, plan: &FlightPlan) -> f64 {
    plan.omega_bar_accel(t) - plan.kp * (pitch_rate - plan.omega_bar_des(t))
}

/// Plans the flight from the measured lift-off state. `drop` is the height
/// of the lift-off surface above the expected landing surface.
pub fn plan_flight(
    model: &PlanarRobotModel,
    lift_off: &RobotState,
    direction: FlipDirection,
    drop: f64,
    opts: &FlightOptions,
) -> Result<FlightPlan> {
    let (q, qd) = (&lift_off.q, &lift_off.qd);
    let leg = virtual_leg(model, q, qd);
    let zdot = leg.com_velocity[1];
    let flight_time = lift_off_targets_with_drop(zdot, leg.angle, model.gravity, direction, drop)
        .map_err(|e| FlightError::Invalid(e.to_string()))?
        .flight_time;
    let cm = centroidal_momentum(model, q, qd);
    let inertias: Vec<f64> = cm.links.iter().map(|l| l.inertia).collect();
    let rates: Vec<f64> = cm.links.iter().map(|l| l.rate).collect();
    let omega_lo = average_lower_body_rate(&inertias, &rates)?;
    let sign = direction.sign();
    // The pelvis starts the plan where it is, measured against the lift-off leg angle.
    let turns = ((q[PITCH] - leg.angle) / (2.0 * PI)).round();
    let mut theta = build_flip_reference(leg.angle, omega_lo, flight_time, sign)?;
    theta.coeffs[0] += 2.0 * PI * turns;
    let plan = FlightPlan {
        flight_time,
        direction: sign,
        theta,
        kp: opts.kp,
        lower_inertia: cm.lower_body_inertia(),
        h_pitch: cm.h_pitch,
        t1: opts.landing_switch * flight_time,
        leg_length_lo: leg.actuated,
        tuck_length: opts.tuck_length.min(leg.actuated - 1e-3),
        beta_lo: leg.angle,
        reevaluate_inertia: opts.reevaluate_inertia,
    };
    tuck_profile_derivs(
        0.0,
        plan.flight_time,
        plan.t1,
        plan.leg_length_lo,
        plan.tuck_length,
    )?;
    Ok(plan)
}
