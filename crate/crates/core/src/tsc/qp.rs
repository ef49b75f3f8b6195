//! Dual active-set method (Goldfarb–Idnani) for small dense strictly convex
//! QPs: minimize `½xᵀGx + cᵀx` subject to `A x ≤ b`.
//!
//! The method starts at the unconstrained minimizer and adds violated
//! constraints one at a time, keeping the iterate dual feasible. Any violated
//! row may be picked next, so rows active at the previous solve are tried
//! first: across control ticks this usually finishes in as many iterations as
//! there are active rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    /// Hessian not positive definite or iteration limit hit.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Active rows and their multipliers.
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// A row counts as violated beyond this.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Primal step `z` and dual step `r` for adding normal `np` to the active
/// rows with normals `nn` (columns), under inverse Hessian from `chol`.
fn directions(
    chol: &Cholesky<f64, Dyn>,
    nn: &DMatrix<f64>,
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let ginv_np = chol.solve(np);
    if nn.ncols() == 0 {
        return (ginv_np, DVector::zeros(0));
    }
    let w = chol.solve(nn);
    let k = nn.transpose() * &w;
    let r = k
        .clone()
        .lu()
        .solve(&(w.transpose() * np))
        .unwrap_or_else(|| DVector::zeros(nn.ncols()));
    let z = ginv_np - w * &r;
    (z, r)
}

pub fn solve_qp(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    warm: &[usize],
    opts: &QpOptions,
) -> QpSolution {
    let n = g.nrows();
    let m = a.nrows();
    let fail = |status, iterations| QpSolution {
        x: DVector::zeros(n),
        status,
        iterations,
        active: Vec::new(),
        multipliers: Vec::new(),
        objective: f64::NAN,
    };
    let Some(chol) = g.clone().cholesky() else {
        return fail(QpStatus::Failed, 0);
    };
    let mut x = -chol.solve(c);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let row_norm: Vec<f64> = (0..m).map(|i| a.row(i).norm().max(1e-300)).collect();
    // Row i in ≥ form: n_i = −a_i, n_iᵀx ≥ −b_i; slack s_i = b_i − a_i x.
    let slack = |x: &DVector<f64>, i: usize| b[i] - a.row(i).dot(&x.transpose());
    let normals = |set: &[usize]| {
        let mut nn = DMatrix::zeros(n, set.len());
        for (k, &i) in set.iter().enumerate() {
            nn.set_column(k, &(-a.row(i).transpose()));
        }
        nn
    };

    loop {
        let violated =
            |i: usize, x: &DVector<f64>| slack(x, i) < -opts.feas_tol * (1.0 + b[i].abs());
        let pick = |cands: &mut dyn Iterator<Item = usize>, x: &DVector<f64>| {
            cands
                .filter(|&i| !active.contains(&i) && violated(i, x))
                .map(|i| (i, -slack(x, i) / row_norm[i]))
                .max_by(|p, q| p.1.total_cmp(&q.1))
                .map(|p| p.0)
        };
        let p = pick(&mut warm.iter().copied().filter(|&i| i < m), &x)
            .or_else(|| pick(&mut (0..m), &x));
        let Some(p) = p else {
            break;
        };
        let np = -a.row(p).transpose();
        let mut lam_p = 0.0;
        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return fail(QpStatus::Failed, iterations);
            }
            let (z, r) = directions(&chol, &normals(&active), &np);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let t = lambda[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let curvature = z.dot(&np);
            let t2 = if z.amax() > 1e-12 * (1.0 + x.amax()) && curvature > 0.0 {
                -slack(&x, p) / curvature
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                let mut sol = fail(QpStatus::Infeasible, iterations);
                sol.x = x;
                return sol;
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for (k, l) in lambda.iter_mut().enumerate() {
                *l -= t * r[k];
            }
            lam_p += t;
            if t2 <= t1 {
                active.push(p);
                lambda.push(lam_p);
                break;
            }
            let k = drop.expect("partial step has a blocking row");
            active.remove(k);
            lambda.remove(k);
        }
    }
    let objective = 0.5 * x.dot(&(g * &x)) + c.dot(&x);
    QpSolution {
        x,
        status: QpStatus::Optimal,
        iterations,
        active,
        multipliers: lambda,
        objective,
    }
}

/// Stationarity, primal feasibility, dual feasibility and complementarity,
/// as one max-norm.
pub fn kkt_residual(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    sol: &QpSolution,
) -> f64 {
    let mut grad = g * &sol.x + c;
    let mut worst: f64 = 0.0;
    for (&i, &l) in sol.active.iter().zip(&sol.multipliers) {
        grad += a.row(i).transpose() * l;
        worst = worst
            .max(-l)
            .max((l * (b[i] - a.row(i).dot(&sol.x.transpose()))).abs());
    }
    for i in 0..a.nrows() {
        worst = worst.max(a.row(i).dot(&sol.x.transpose()) - b[i]);
    }
    worst.max(grad.amax())
}
