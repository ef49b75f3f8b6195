use serde::{Deserialize, Serialize};

use super::recheck::recheck;
use super::transcription::{NlpProblem, PhaseKind, TerminalCondition, NODE_DIM};
use super::{Result, TrajoptError};
use crate::clock::Stopwatch;
use crate::fslip::{FslipControl, FslipState};
use crate::nlp::{self, NamedViolation, Nlp, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpSolution {
    pub kind: PhaseKind,
    pub states: Vec<FslipState>,
    pub controls: Vec<FslipControl>,
    pub duration: f64,
    pub foot_x: f64,
    /// Flight time the lift-off conditions were built for.
    pub flight_time: Option<f64>,
    pub objective: f64,
    /// Max |equality| from the independent recheck.
    pub max_eq_residual: f64,
    /// Max positive inequality and bound violation from the independent recheck.
    pub max_ineq_violation: f64,
    pub stationarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub worst_violations: Vec<NamedViolation>,
    #[serde(skip)]
    pub solve_seconds: f64,
}

impl NlpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn node_times(&self) -> Vec<f64> {
        let n = self.states.len();
        (0..n)
            .map(|k| self.duration * k as f64 / (n - 1) as f64)
            .collect()
    }

    /// Flattened decision vector in the transcription layout.
    pub fn decision_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(NODE_DIM * self.states.len() + 1);
        for (s, c) in self.states.iter().zip(&self.controls) {
            x.extend(s.to_array());
            x.extend([c.leg_accel, c.foot_moment, c.flywheel_torque]);
        }
        x.push(self.duration);
        x
    }
}

/// Cubic Hermite `(value, rate, second derivative)` from `(y0, v0)` to
/// `(y1, v1)` over `[0, t]`, at `s = τ / t`.
fn hermite(y0: f64, v0: f64, y1: f64, v1: f64, t: f64, s: f64) -> (f64, f64, f64) {
    let (m0, m1) = (v0 * t, v1 * t);
    let (s2, s3) = (s * s, s * s * s);
    let y = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
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
    (y, d / t, dd / (t * t))
}

/// Slopes of samples spaced `dt` apart (central differences inside).
fn slopes(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (v[b] - v[a]) / ((b - a) as f64 * dt)
        })
        .collect()
}

/// Dynamically plausible starting point: cubic Hermite COM and flywheel
/// profiles between the pinned initial state and the nominal end state,
/// with the actuated leg length chosen so the static spring supplies the
/// force the COM profile needs.
pub fn default_guess(nlp: &NlpProblem) -> Vec<f64> {
    let p = &nlp.params;
    let n = nlp.nodes;
    let t = nlp.guess_duration;
    let dt = t / (n - 1) as f64;
    let (a, b) = (nlp.initial, nlp.guess_terminal);
    let [l_lo, l_hi] = p.leg_length_bounds;
    let theta_end = a[2] + 0.5 * (a[6] + b[6]) * t;
    let mut nodes: Vec<[f64; 8]> = Vec::with_capacity(n);
    for k in 0..n {
        let s = k as f64 / (n - 1) as f64;
        let (x, xd, xdd) = hermite(a[0], a[4], b[0], b[4], t, s);
        let (z, zd, zdd) = hermite(a[1], a[5], b[1], b[5], t, s);
        let (th, thd, _) = hermite(a[2], a[6], theta_end, b[6], t, s);
        let dx = x - nlp.foot_x;
        let r = dx.hypot(z);
        let axial = p.mass * (xdd * dx + (zdd + p.gravity) * z) / r;
        let mut l = r;
        for _ in 0..50 {
            l = (r + axial / p.stiffness_unchecked(l.clamp(l_lo, l_hi))).clamp(l_lo, l_hi);
        }
        nodes.push([x, z.max(nlp.min_height), th, l, xd, zd, thd, 0.0]);
    }
    nodes[0] = a;
    let ls: Vec<f64> = nodes.iter().map(|v| v[3]).collect();
    let ld = slopes(&ls, dt);
    for (k, v) in nodes.iter_mut().enumerate().skip(1) {
        v[7] = ld[k];
    }
    let ld: Vec<f64> = nodes.iter().map(|v| v[7]).collect();
    let ldd = slopes(&ld, dt);
    let h: Vec<f64> = nodes
        .iter()
        .map(|v| p.inertia_unchecked(v[3]) * v[6])
        .collect();
    let tau = slopes(&h, dt);
    let mut x = Vec::with_capacity(nlp.num_vars());
    for k in 0..n {
        x.extend(nodes[k]);
        x.extend([
            ldd[k].clamp(-p.leg_accel_bound, p.leg_accel_bound),
            0.0,
            tau[k].clamp(-p.flywheel_torque_bound, p.flywheel_torque_bound),
        ]);
    }
    x.push(t);
    x
}

pub(crate) fn unpack(nlp: &NlpProblem, x: &[f64]) -> (Vec<FslipState>, Vec<FslipControl>, f64) {
    let mut states = Vec::with_capacity(nlp.nodes);
    let mut controls = Vec::with_capacity(nlp.nodes);
    for k in 0..nlp.nodes {
        let v = nlp.node(x, k);
        states.push(FslipState::from_array(&v[..8], nlp.foot_x));
        controls.push(FslipControl {
            leg_accel: v[8],
            foot_moment: v[9],
            flywheel_torque: v[10],
        });
    }
    (states, controls, x[nlp.duration_index()])
}

/// Runs the SQP solver and verifies the result independently.
pub fn solve_nlp(nlp: &NlpProblem, guess: &[f64], opts: &SolverOptions) -> Result<NlpSolution> {
    if guess.len() != nlp.num_vars() {
        return Err(TrajoptError::Dimension(format!(
            "guess has {} entries, problem has {}",
            guess.len(),
            nlp.num_vars()
        )));
    }
    let clock = Stopwatch::start();
    let r = nlp::solve(nlp, guess, opts)?;
    let solve_seconds = clock.seconds();
    let (states, controls, duration) = unpack(nlp, &r.x);
    let check = recheck(nlp, &states, &controls, duration)?;
    let flight_time = nlp.terminal.iter().find_map(|t| match t {
        TerminalCondition::PitchRate { flight_time, .. } => Some(*flight_time),
        _ => None,
    });
    Ok(NlpSolution {
        kind: nlp.kind,
        states,
        controls,
        duration,
        foot_x: nlp.foot_x,
        flight_time,
        objective: r.objective,
        max_eq_residual: check.max_eq,
        max_ineq_violation: check.max_ineq,
        stationarity: r.stationarity,
        status: r.status,
        iterations: r.iterations,
        worst_violations: if r.status == SolveStatus::Converged {
            Vec::new()
        } else {
            check.worst
        },
        solve_seconds,
    })
}
