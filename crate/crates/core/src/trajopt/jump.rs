use serde::{Deserialize, Serialize};

use super::transcription::{NlpProblem, PhaseKind, TerminalCondition};
use super::{lift_off_targets_with_drop, FlipDirection, OptimizerSettings, Result, TrajoptError};
use crate::fslip::{FslipParams, FslipState};

/// What the jump has to achieve at lift-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpTask {
    pub direction: FlipDirection,
    /// Vertical COM velocity at lift-off (m/s).
    pub liftoff_zdot: f64,
    /// COM displacement from the standing pose to touch-down (m).
    #[serde(default)]
    pub forward_distance: Option<f64>,
    /// Height of the lift-off surface above the landing surface (m).
    #[serde(default)]
    pub landing_drop: f64,
    /// Bound on |β| at lift-off (rad).
    #[serde(default)]
    pub max_leg_angle: Option<f64>,
    /// Actuated leg length of the standing start (m).
    pub standing_leg_length: f64,
}

impl JumpTask {
    pub fn flight_time(&self, gravity: f64) -> Result<f64> {
        Ok(lift_off_targets_with_drop(
            self.liftoff_zdot,
            0.0,
            gravity,
            self.direction,
            self.landing_drop,
        )?
        .flight_time)
    }
}

/// Jumping optimization from the standing pose to a lift-off state that
/// launches the requested flip.
pub fn build_jump_nlp(
    params: &FslipParams,
    task: &JumpTask,
    settings: &OptimizerSettings,
) -> Result<NlpProblem> {
    params.validate()?;
    let nodes = settings.jump_nodes;
    if nodes < 10 {
        return Err(TrajoptError::Task(format!(
            "need at least 10 nodes, got {nodes}"
        )));
    }
    let [tmin, tmax] = settings.jump_duration_bounds;
    if !(0.0 < tmin && tmin < tmax) {
        return Err(TrajoptError::Task(format!(
            "bad duration bounds [{tmin}, {tmax}]"
        )));
    }
    let g = params.gravity;
    let targets =
        lift_off_targets_with_drop(task.liftoff_zdot, 0.0, g, task.direction, task.landing_drop)?;
    let flight_time = targets.flight_time;
    if flight_time < 0.05 {
        return Err(TrajoptError::Task(format!(
            "flight of {flight_time:.4} s leaves no time to rotate"
        )));
    }
    let standing = FslipState::standing(params, task.standing_leg_length)?;

    // Momentum needed at lift-off, at the most favorable leg angle and inertia.
    let beta_max = task
        .max_leg_angle
        .unwrap_or(std::f64::consts::FRAC_PI_2)
        .min(std::f64::consts::FRAC_PI_2);
    let min_rate = (2.0 * std::f64::consts::PI - 2.0 * beta_max) / flight_time;
    let [lo, hi] = params.leg_length_bounds;
    let min_inertia = (0..=50)
        .map(|i| params.inertia_unchecked(lo + (hi - lo) * i as f64 / 50.0))
        .fold(f64::INFINITY, f64::min);
    let reachable = params.flywheel_torque_bound * tmax;
    if min_inertia * min_rate > reachable {
        return Err(TrajoptError::Infeasible(format!(
            "lift-off momentum {:.2} N·m·s exceeds τ_max·T_max = {reachable:.2} N·m·s",
            min_inertia * min_rate
        )));
    }

    let mut terminal = vec![
        TerminalCondition::VerticalVelocity(task.liftoff_zdot),
        TerminalCondition::PitchRate {
            flight_time,
            direction: task.direction.sign(),
        },
        TerminalCondition::NoNormalForce,
    ];
    let mut xdot_guess = 0.0;
    if let Some(d) = task.forward_distance {
        terminal.push(TerminalCondition::ForwardReach {
            flight_time,
            target: standing.x + d,
        });
        xdot_guess = d / flight_time;
    }
    if let Some(b) = task.max_leg_angle {
        terminal.push(TerminalCondition::LegAngleLimit(b));
    }

    let l_lo = hi - 0.05 * (hi - lo);
    let guess_terminal = [
        standing.x,
        l_lo,
        0.0,
        l_lo,
        xdot_guess,
        task.liftoff_zdot,
        targets.pitch_rate,
        task.liftoff_zdot,
    ];
    Ok(NlpProblem {
        kind: PhaseKind::Jumping,
        params: params.clone(),
        nodes,
        foot_x: standing.x,
        weights: settings.weights,
        duration_bounds: settings.jump_duration_bounds,
        initial: standing.to_array(),
        terminal,
        guess_terminal,
        guess_duration: 0.4f64.clamp(tmin, tmax),
        min_height: 0.25 * lo,
    })
}
