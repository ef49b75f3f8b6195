//! Direct-transcription trajectory optimization of the jumping and landing
//! phases on the flywheel SLIP template, and extraction of the references the
//! whole-body controller tracks.

mod jump;
mod landing;
mod recheck;
mod reference;
mod solution;
mod transcription;

pub use jump::{build_jump_nlp, JumpTask};
pub use landing::build_landing_nlp;
pub use recheck::{recheck, Recheck};
pub use reference::{
    extract_reference, Extrapolation, LiftOffPlan, ReferenceBundle, ReferenceSample,
};
pub use solution::{default_guess, solve_nlp, NlpSolution};
pub use transcription::{CostWeights, NlpProblem, PhaseKind, TerminalCondition, NODE_DIM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fslip::FslipError;
use crate::nlp::{NamedViolation, NlpError, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipDirection {
    #[serde(alias = "front")]
    Frontflip,
    #[serde(alias = "back")]
    Backflip,
}

impl FlipDirection {
    /// Sign of the body rotation: forward pitch is positive.
    pub fn sign(self) -> f64 {
        match self {
            FlipDirection::Frontflip => 1.0,
            FlipDirection::Backflip => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlipDirection::Frontflip => "frontflip",
            FlipDirection::Backflip => "backflip",
        }
    }
}

impl std::str::FromStr for FlipDirection {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "front" | "frontflip" => Ok(FlipDirection::Frontflip),
            "back" | "backflip" => Ok(FlipDirection::Backflip),
            other => Err(format!("unknown flip direction `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajoptError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error("infeasible by construction: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] FslipError),
    #[error(transparent)]
    Solver(#[from] NlpError),
    #[error(
        "solution did not converge ({status}); worst rows: {}",
        list_violations(worst)
    )]
    NotConverged {
        status: String,
        worst: Vec<NamedViolation>,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, TrajoptError>;

fn list_violations(rows: &[NamedViolation]) -> String {
    rows.iter()
        .map(|r| format!("{} {:.3e}", r.name, r.violation))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Transcription settings shared by both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub jump_nodes: usize,
    pub landing_nodes: usize,
    pub weights: CostWeights,
    pub jump_duration_bounds: [f64; 2],
    pub landing_duration_bounds: [f64; 2],
    pub solver: SolverOptions,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            jump_nodes: 40,
            landing_nodes: 30,
            weights: CostWeights::default(),
            jump_duration_bounds: [0.2, 2.0],
            landing_duration_bounds: [0.3, 3.0],
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftOffTargets {
    pub flight_time: f64,
    /// Whole-body pitch rate at lift-off.
    pub pitch_rate: f64,
}

/// Flight time and lift-off pitch rate for a flat landing.
pub fn lift_off_targets(
    zdot: f64,
    beta_lo: f64,
    gravity: f64,
    direction: FlipDirection,
) -> Result<LiftOffTargets> {
    lift_off_targets_with_drop(zdot, beta_lo, gravity, direction, 0.0)
}

/// As [`lift_off_targets`], landing `drop` below the lift-off plane. The
/// body must turn through `±2π − 2β` while airborne.
pub fn lift_off_targets_with_drop(
    zdot: f64,
    beta_lo: f64,
    gravity: f64,
    direction: FlipDirection,
    drop: f64,
) -> Result<LiftOffTargets> {
    if !(zdot > 0.0) || !zdot.is_finite() {
        return Err(TrajoptError::Task(format!(
            "lift-off vertical velocity must be positive, got {zdot}"
        )));
    }
    let disc = zdot * zdot + 2.0 * gravity * drop;
    if !(disc > 0.0) {
        return Err(TrajoptError::Task(format!(
            "apex {:.3} m is below the landing surface",
            zdot * zdot / (2.0 * gravity)
        )));
    }
    let flight_time = (zdot + disc.sqrt()) / gravity;
    let pitch_rate = (direction.sign() * 2.0 * std::f64::consts::PI - 2.0 * beta_lo) / flight_time;
    Ok(LiftOffTargets {
        flight_time,
        pitch_rate,
    })
}

/// `x_{k+1} − x_k − (ΔT/2)(f_k + f_{k+1})`.
pub fn trapezoid_defect(
    x_k: &[f64],
    x_next: &[f64],
    f_k: &[f64],
    f_next: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let n = x_k.len();
    if x_next.len() != n || f_k.len() != n || f_next.len() != n {
        return Err(TrajoptError::Dimension(format!(
            "defect operands have lengths {}, {}, {}, {}",
            n,
            x_next.len(),
            f_k.len(),
            f_next.len()
        )));
    }
    Ok((0..n)
        .map(|i| x_next[i] - x_k[i] - 0.5 * dt * (f_k[i] + f_next[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flight_time_and_pitch_rate() {
        let t = lift_off_targets(4.905, 0.0, 9.81, FlipDirection::Frontflip).unwrap();
        assert!((t.flight_time - 1.0).abs() < 1e-12);
        let t = lift_off_targets(9.81, 0.0, 9.81, FlipDirection::Frontflip).unwrap();
        assert!((t.pitch_rate - PI).abs() < 1e-12);
        let t = lift_off_targets(9.81, 0.1, 9.81, FlipDirection::Frontflip).unwrap();
        assert!((t.pitch_rate - (PI - 0.1)).abs() < 1e-12);
        let t = lift_off_targets(9.81, 0.0, 9.81, FlipDirection::Backflip).unwrap();
        assert!((t.pitch_rate + PI).abs() < 1e-12);
        assert!(lift_off_targets(0.0, 0.0, 9.81, FlipDirection::Backflip).is_err());
        assert!(lift_off_targets(-1.0, 0.0, 9.81, FlipDirection::Backflip).is_err());
    }

    #[test]
    fn drop_lengthens_flight() {
        let flat = lift_off_targets(4.0, 0.0, 9.81, FlipDirection::Frontflip).unwrap();
        let drop =
            lift_off_targets_with_drop(4.0, 0.0, 9.81, FlipDirection::Frontflip, 0.5).unwrap();
        // z(T) = ż T − g T²/2 = −0.5
        let t = drop.flight_time;
        assert!((4.0 * t - 0.5 * 9.81 * t * t + 0.5).abs() < 1e-12);
        assert!(drop.flight_time > flat.flight_time);
        assert!(
            lift_off_targets_with_drop(1.0, 0.0, 9.81, FlipDirection::Frontflip, -1.0).is_err()
        );
    }

    #[test]
    fn defect_basics() {
        assert_eq!(
            trapezoid_defect(&[1.0], &[1.0], &[0.0], &[0.0], 0.1).unwrap(),
            vec![0.0]
        );
        let d =
            trapezoid_defect(&[1.0, 2.0], &[1.3, 1.8], &[3.0, -2.0], &[3.0, -2.0], 0.1).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
        assert!(trapezoid_defect(&[1.0], &[1.0, 2.0], &[0.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn direction_parsing() {
        assert_eq!(
            "front".parse::<FlipDirection>().unwrap(),
            FlipDirection::Frontflip
        );
        assert_eq!(
            "Backflip".parse::<FlipDirection>().unwrap(),
            FlipDirection::Backflip
        );
        assert!("sideways".parse::<FlipDirection>().is_err());
        let d: FlipDirection = serde_json::from_str("\"back\"").unwrap();
        assert_eq!(d, FlipDirection::Backflip);
    }
}
