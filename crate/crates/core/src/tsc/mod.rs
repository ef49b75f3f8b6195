//! Torque-only task-space control. Outputs are affine in the input through
//! the contact-eliminated dynamics, so one small QP per tick picks the input
//! that best realizes the desired output derivatives while keeping the
//! ground force in its friction and ZMP cone.

mod controller;
pub mod qp;

pub use controller::{FlightTarget, StanceTarget, TickLog, TscController, TscMode};

use nalgebra::{DMatrix, DVector, RowSVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::robot::{AccelMap, GrfMap, PlanarRobotModel, VecU, NQ, NU};
use qp::{kkt_residual, solve_qp, QpOptions, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub kp1: f64,
    pub kp2: f64,
    pub kd2: f64,
    pub momentum_weight: f64,
    pub position_weight: f64,
    /// Input regularization ε.
    pub regularization: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp1: 20.0,
            kp2: 400.0,
            kd2: 40.0,
            momentum_weight: 10.0,
            position_weight: 1.0,
            regularization: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputOrder {
    /// Relative degree one: `Ẏ = jac·q̈ + drift`.
    Momentum,
    /// Relative degree two: `Ÿ = jac·q̈ + drift`.
    Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRow {
    pub name: &'static str,
    pub order: OutputOrder,
    /// Output error.
    pub value: f64,
    /// Error rate (position rows).
    pub rate: f64,
    pub jac: RowSVector<f64, NQ>,
    /// Velocity-product term minus the reference's derivative.
    pub drift: f64,
}

/// `(𝒜, ℬ)` with `𝒜 = [A Ā]`, `ℬ = [A b̄ + b]`.
pub fn output_affine(rows: &[OutputRow], accel: &AccelMap) -> (DMatrix<f64>, DVector<f64>) {
    let m = rows.len();
    let mut a = DMatrix::zeros(m, NU);
    let mut b = DVector::zeros(m);
    for (i, r) in rows.iter().enumerate() {
        let ai = r.jac * accel.a;
        for j in 0..NU {
            a[(i, j)] = ai[j];
        }
        b[i] = (r.jac * accel.b)[0] + r.drift;
    }
    (a, b)
}

/// `Ẏ₁ = −K_p1 𝒴₁`, `Ÿ₂ = −K_p2 𝒴₂ − K_d2 Ẏ₂`.
pub fn desired_output_accel(rows: &[OutputRow], gains: &Gains) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| match r.order {
            OutputOrder::Momentum => -gains.kp1 * r.value,
            OutputOrder::Position => -gains.kp2 * r.value - gains.kd2 * r.rate,
        }),
    )
}

pub fn output_weights(rows: &[OutputRow], gains: &Gains) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| match r.order {
            OutputOrder::Momentum => gains.momentum_weight,
            OutputOrder::Position => gains.position_weight,
        }),
    )
}

pub type GrfPolytope = SMatrix<f64, 5, 3>;

/// `C_v F ≤ 0` for `F = (F_x, F_z, m_y)`: `F_z ≥ 0`, `|F_x| ≤ μF_z`,
/// `|m_y| ≤ (l/2)F_z`.
pub fn grf_polytope(model: &PlanarRobotModel) -> GrfPolytope {
    let mu = model.friction_mu;
    let half = 0.5 * model.foot_length;
    GrfPolytope::from_row_slice(&[
        0.0, -1.0, 0.0, //
        1.0, -mu, 0.0, //
        -1.0, -mu, 0.0, //
        0.0, -half, 1.0, //
        0.0, -half, -1.0,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrfConstraint {
    pub polytope: GrfPolytope,
    pub map: GrfMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TscProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ydes: DVector<f64>,
    pub weights: DVector<f64>,
    pub grf: Option<GrfConstraint>,
    pub lb: VecU,
    pub ub: VecU,
    pub regularization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TscStatus {
    Optimal,
    /// Ground-force rows relaxed with slacks; input still within its box.
    SlackRelaxed,
    /// Unconstrained optimum clamped to the box.
    Clamped,
}

impl TscStatus {
    pub fn name(self) -> &'static str {
        match self {
            TscStatus::Optimal => "optimal",
            TscStatus::SlackRelaxed => "slack_relaxed",
            TscStatus::Clamped => "clamped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TscSolution {
    pub u: VecU,
    pub status: TscStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active: Vec<usize>,
    pub seconds: f64,
}

impl TscProblem {
    /// `½uᵀGu + cᵀu` form of the weighted tracking cost.
    pub fn cost_terms(&self) -> (DMatrix<f64>, DVector<f64>) {
        let w = DMatrix::from_diagonal(&self.weights);
        let at_w = self.a.transpose() * w;
        let g = &at_w * &self.a + DMatrix::identity(NU, NU) * self.regularization;
        let c = at_w * (&self.b - &self.ydes);
        (g, c)
    }

    /// Stacked `A u ≤ b`: ground-force rows, then upper and lower box rows.
    pub fn constraint_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let ngrf = if self.grf.is_some() { 5 } else { 0 };
        let mut a = DMatrix::zeros(ngrf + 2 * NU, NU);
        let mut b = DVector::zeros(ngrf + 2 * NU);
        if let Some(grf) = &self.grf {
            let ca = grf.polytope * grf.map.a;
            let cb = grf.polytope * grf.map.b;
            for i in 0..5 {
                for j in 0..NU {
                    a[(i, j)] = ca[(i, j)];
                }
                b[i] = -cb[i];
            }
        }
        for j in 0..NU {
            a[(ngrf + j, j)] = 1.0;
            b[ngrf + j] = self.ub[j];
            a[(ngrf + NU + j, j)] = -1.0;
            b[ngrf + NU + j] = -self.lb[j];
        }
        (a, b)
    }

    /// Tracking cost `‖𝒜u + ℬ − Ẏ_des‖²_W + ε‖u‖²`.
    pub fn cost(&self, u: &VecU) -> f64 {
        let ud = DVector::from_column_slice(u.as_slice());
        let e = &self.a * &ud + &self.b - &self.ydes;
        e.component_mul(&e).dot(&self.weights) + self.regularization * ud.norm_squared()
    }
}

pub fn solve_tsc_qp(prob: &TscProblem, warm: &[usize]) -> TscSolution {
    let clock = Stopwatch::start();
    let (g, c) = prob.cost_terms();
    let (a, b) = prob.constraint_rows();
    let opts = QpOptions::default();
    let sol = solve_qp(&g, &c, &a, &b, warm, &opts);
    if sol.status == QpStatus::Optimal {
        return TscSolution {
            u: VecU::from_column_slice(sol.x.as_slice()),
            status: TscStatus::Optimal,
            iterations: sol.iterations,
            kkt_residual: kkt_residual(&g, &c, &a, &b, &sol),
            active: sol.active,
            seconds: clock.seconds(),
        };
    }

    let iterations = sol.iterations;
    if let Some(relaxed) = solve_relaxed(prob, &g, &c, &opts) {
        let mut r = relaxed;
        r.iterations += iterations;
        r.seconds = clock.seconds();
        return r;
    }
    let free = g
        .clone()
        .cholesky()
        .map(|ch| -ch.solve(&c))
        .unwrap_or_else(|| DVector::zeros(NU));
    let u = VecU::from_fn(|i, _| free[i].clamp(prob.lb[i], prob.ub[i]));
    TscSolution {
        u,
        status: TscStatus::Clamped,
        iterations,
        kkt_residual: f64::NAN,
        active: Vec::new(),
        seconds: clock.seconds(),
    }
}

/// Ground-force rows softened with nonnegative slacks under a heavy
/// quadratic penalty; the box stays hard.
fn solve_relaxed(
    prob: &TscProblem,
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    opts: &QpOptions,
) -> Option<TscSolution> {
    let grf = prob.grf.as_ref()?;
    let n = NU + 5;
    let penalty = 1e6 * g.diagonal().amax().max(1.0);
    let mut gg = DMatrix::zeros(n, n);
    gg.view_mut((0, 0), (NU, NU)).copy_from(g);
    for i in NU..n {
        gg[(i, i)] = penalty;
    }
    let mut cc = DVector::zeros(n);
    cc.rows_mut(0, NU).copy_from(c);
    let ca = grf.polytope * grf.map.a;
    let cb = grf.polytope * grf.map.b;
    let rows = 5 + 5 + 2 * NU;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for i in 0..5 {
        for j in 0..NU {
            a[(i, j)] = ca[(i, j)];
        }
        a[(i, NU + i)] = -1.0;
        b[i] = -cb[i];
        a[(5 + i, NU + i)] = -1.0;
    }
    for j in 0..NU {
        a[(10 + j, j)] = 1.0;
        b[10 + j] = prob.ub[j];
        a[(10 + NU + j, j)] = -1.0;
        b[10 + NU + j] = -prob.lb[j];
    }
    let sol = solve_qp(&gg, &cc, &a, &b, &[], opts);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    Some(TscSolution {
        u: VecU::from_fn(|i, _| sol.x[i]),
        status: TscStatus::SlackRelaxed,
        iterations: sol.iterations,
        kkt_residual: kkt_residual(&gg, &cc, &a, &b, &sol),
        active: Vec::new(),
        seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn polytope_rows() {
        let mut m = PlanarRobotModel::default();
        m.foot_length = 0.2;
        let c = grf_polytope(&m);
        assert!((c * Vector3::new(0.0, 100.0, 0.0)).max() <= 0.0);
        assert!((c * Vector3::new(70.0, 100.0, 0.0)).max() > 0.0);
        for my in [10.0, -10.0] {
            let rows = c * Vector3::new(0.0, 100.0, my);
            assert!(rows.max().abs() < 1e-12);
        }
    }

    #[test]
    fn desired_accelerations() {
        let row = |order, value, rate| OutputRow {
            name: "y",
            order,
            value,
            rate,
            jac: RowSVector::zeros(),
            drift: 0.0,
        };
        let g = Gains {
            kp2: 100.0,
            ..Gains::default()
        };
        let v = desired_output_accel(
            &[
                row(OutputOrder::Position, 0.1, 0.0),
                row(OutputOrder::Momentum, 0.0, 0.0),
            ],
            &g,
        );
        assert!((v[0] + 10.0).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn square_unconstrained_solve_inverts_the_map() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.1, 0.0, 0.3, //
                0.0, 1.5, 0.2, 0.0, //
                0.4, 0.0, 3.0, 0.1, //
                0.0, 0.2, 0.0, 1.0,
            ],
        );
        let prob = TscProblem {
            a: a.clone(),
            b: DVector::from_vec(vec![0.5, -1.0, 0.2, 0.3]),
            ydes: DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]),
            weights: DVector::from_element(4, 1.0),
            grf: None,
            lb: VecU::repeat(-1e6),
            ub: VecU::repeat(1e6),
            regularization: 0.0,
        };
        let s = solve_tsc_qp(&prob, &[]);
        let expect = a.lu().solve(&(&prob.ydes - &prob.b)).unwrap();
        for i in 0..4 {
            assert!((s.u[i] - expect[i]).abs() < 1e-9);
        }
    }
}
