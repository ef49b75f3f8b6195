//! From-scratch verification of a transcribed trajectory using the public
//! template dynamics rather than the solver's node functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::transcription::{NlpProblem, TerminalCondition};
use super::{trapezoid_defect, Result, TrajoptError};
use crate::fslip::{
    ground_reaction, leg_geometry, spring_force, stance_dynamics, FslipControl, FslipState,
};
use crate::nlp::NamedViolation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recheck {
    /// Max |equality| (physical units of each row).
    pub max_eq: f64,
    /// Max positive violation of path inequalities (N, N·m) and bounds.
    pub max_ineq: f64,
    /// Normal force at the final node (N).
    pub final_normal_force: f64,
    /// `|θ̇_N − θ̇_target| / |θ̇_target|` for a jump, else `None`.
    pub liftoff_momentum_rel_error: Option<f64>,
    pub worst: Vec<NamedViolation>,
}

pub fn recheck(
    nlp: &NlpProblem,
    states: &[FslipState],
    controls: &[FslipControl],
    duration: f64,
) -> Result<Recheck> {
    let p = &nlp.params;
    let n = nlp.nodes;
    if states.len() != n || controls.len() != n {
        return Err(TrajoptError::Dimension(
            "node count differs from the problem".into(),
        ));
    }
    let mut rows: Vec<NamedViolation> = Vec::new();
    let eq = |name: String, v: f64, rows: &mut Vec<NamedViolation>| {
        rows.push(NamedViolation {
            name,
            violation: v.abs(),
        })
    };

    let first = states[0].to_array();
    for i in 0..8 {
        eq(
            format!("initial state [{i}]"),
            first[i] - nlp.initial[i],
            &mut rows,
        );
    }

    let dt = duration / (n - 1) as f64;
    let rates: Vec<[f64; 8]> = states
        .iter()
        .zip(controls)
        .map(|(s, c)| stance_dynamics(s, c, p))
        .collect::<std::result::Result<_, _>>()?;
    for k in 0..n - 1 {
        let d = trapezoid_defect(
            &states[k].to_array(),
            &states[k + 1].to_array(),
            &rates[k],
            &rates[k + 1],
            dt,
        )?;
        for (i, v) in d.into_iter().enumerate() {
            eq(format!("defect {k}->{} [{i}]", k + 1), v, &mut rows);
        }
    }

    let last = states[n - 1];
    let last_c = controls[n - 1];
    let grf_last = ground_reaction(&last, &last_c, p)?;
    let geo_last = leg_geometry(&last)?;
    let mut momentum_err = None;
    for t in &nlp.terminal {
        match *t {
            TerminalCondition::VerticalVelocity(z) => {
                eq("terminal zdot".into(), last.zdot - z, &mut rows)
            }
            TerminalCondition::PitchRate {
                flight_time,
                direction,
            } => {
                let target = (direction * 2.0 * PI - 2.0 * geo_last.beta) / flight_time;
                let inertia = p.inertia(last.leg_length)?;
                let rel =
                    (inertia * last.thetadot - inertia * target).abs() / (inertia * target).abs();
                momentum_err = Some(rel);
                eq(
                    "terminal pitch rate".into(),
                    last.thetadot - target,
                    &mut rows,
                );
            }
            TerminalCondition::NoNormalForce => {
                eq("terminal normal force".into(), grf_last.fz, &mut rows)
            }
            TerminalCondition::ForwardReach {
                flight_time,
                target,
            } => eq(
                "terminal forward reach".into(),
                last.x + last.xdot * flight_time - target,
                &mut rows,
            ),
            TerminalCondition::LegAngleLimit(_) => {}
            TerminalCondition::Height(h) => eq("terminal height".into(), last.z - h, &mut rows),
            TerminalCondition::Position(x) => eq("terminal position".into(), last.x - x, &mut rows),
            TerminalCondition::Rest => {
                for (name, v) in [
                    ("xdot", last.xdot),
                    ("zdot", last.zdot),
                    ("thetadot", last.thetadot),
                    ("Ldot", last.leg_rate),
                ] {
                    eq(format!("terminal {name}"), v, &mut rows);
                }
            }
            TerminalCondition::SpringForce(f) => {
                let fs = spring_force(
                    p,
                    last.leg_length,
                    geo_last.deflection(&last),
                    geo_last.deflection_rate(&last),
                )?;
                eq("terminal spring force".into(), fs - f, &mut rows);
            }
        }
    }
    let max_eq = rows.iter().map(|r| r.violation).fold(0.0, f64::max);

    let mut ineq: Vec<NamedViolation> = Vec::new();
    let mut viol = |name: String, v: f64| {
        ineq.push(NamedViolation {
            name,
            violation: v.max(0.0),
        })
    };
    let half = 0.5 * p.foot_length;
    let [lo, hi] = p.leg_length_bounds;
    for (k, (s, c)) in states.iter().zip(controls).enumerate() {
        let f = ground_reaction(s, c, p)?;
        viol(format!("normal force at node {k}"), -f.fz);
        viol(
            format!("friction at node {k}"),
            f.fx.abs() - p.friction_mu * f.fz,
        );
        viol(
            format!("ZMP at node {k}"),
            c.foot_moment.abs() - half * f.fz,
        );
        viol(
            format!("leg length at node {k}"),
            (lo - s.leg_length).max(s.leg_length - hi),
        );
        viol(
            format!("leg acceleration at node {k}"),
            c.leg_accel.abs() - p.leg_accel_bound,
        );
        viol(
            format!("foot moment at node {k}"),
            c.foot_moment.abs() - p.foot_moment_bound,
        );
        viol(
            format!("flywheel torque at node {k}"),
            c.flywheel_torque.abs() - p.flywheel_torque_bound,
        );
    }
    for t in &nlp.terminal {
        if let TerminalCondition::LegAngleLimit(b) = *t {
            viol("terminal leg angle".into(), geo_last.beta.abs() - b);
        }
    }
    let [tmin, tmax] = nlp.duration_bounds;
    viol("duration".into(), (tmin - duration).max(duration - tmax));
    let max_ineq = ineq.iter().map(|r| r.violation).fold(0.0, f64::max);

    rows.extend(ineq);
    rows.retain(|r| r.violation > 0.0);
    rows.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    rows.truncate(5);
    Ok(Recheck {
        max_eq,
        max_ineq,
        final_normal_force: grf_last.fz,
        liftoff_momentum_rel_error: momentum_err,
        worst: rows,
    })
}
