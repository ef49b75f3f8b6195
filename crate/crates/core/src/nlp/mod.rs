//! Smooth nonlinear programs and an interior-point solver.
//!
//! Problems are stated as
//!
//! ```text
//! minimize f(x)  subject to  c_E(x) = 0,  c_I(x) ≤ 0,  lb ≤ x ≤ ub
//! ```
//!
//! through the [`Nlp`] trait. Derivatives are supplied by the problem; the
//! solver never differentiates numerically.

mod ipm;

pub use ipm::{solve, SolverOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sparse matrix entries `(row, col, value)`. Repeated entries are summed.
pub type Triplets = Vec<(usize, usize, f64)>;

pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Variable bounds; infinite entries are unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Typical variable magnitudes; the solver iterates on `x / scale`.
    fn scale(&self) -> Vec<f64> {
        vec![1.0; self.num_vars()]
    }

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// `(c_E(x), c_I(x))`.
    fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>);

    /// Jacobians of `c_E` and `c_I`.
    fn jacobians(&self, x: &[f64]) -> (Triplets, Triplets);

    /// Upper triangle (`row ≤ col`) of `σ∇²f + Σλᵢ∇²c_Eᵢ + Σμⱼ∇²c_Iⱼ`.
    /// `None` selects a quasi-Newton approximation.
    fn hessian(&self, _x: &[f64], _sigma: f64, _lambda: &[f64], _mu: &[f64]) -> Option<Triplets> {
        None
    }

    fn eq_name(&self, i: usize) -> String {
        format!("eq[{i}]")
    }

    fn ineq_name(&self, i: usize) -> String {
        format!("ineq[{i}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    /// No acceptable step could be found.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedViolation {
    pub name: String,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub objective: f64,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub stationarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Largest violations at the returned point, worst first.
    pub worst_violations: Vec<NamedViolation>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("QP subproblem failed: {0}")]
    Qp(String),
}

/// Largest violations of the constraints and bounds at `x`, worst first.
pub fn worst_violations<P: Nlp + ?Sized>(
    problem: &P,
    x: &[f64],
    count: usize,
) -> Vec<NamedViolation> {
    let (ce, ci) = problem.constraints(x);
    let (lb, ub) = problem.bounds();
    let mut all: Vec<NamedViolation> = Vec::new();
    for (i, v) in ce.iter().enumerate() {
        all.push(NamedViolation {
            name: problem.eq_name(i),
            violation: v.abs(),
        });
    }
    for (i, v) in ci.iter().enumerate() {
        all.push(NamedViolation {
            name: problem.ineq_name(i),
            violation: v.max(0.0),
        });
    }
    for (i, &xi) in x.iter().enumerate() {
        let v = (lb[i] - xi).max(xi - ub[i]).max(0.0);
        all.push(NamedViolation {
            name: format!("bound[{i}]"),
            violation: v,
        });
    }
    all.retain(|v| v.violation > 0.0 || v.violation.is_nan());
    all.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    all.truncate(count);
    all
}
