//! Trapezoidal direct transcription of a single stance phase.
//!
//! Decision vector: `N` node blocks of `(x, z, θ, L, ẋ, ż, θ̇, L̇, L̈, u, τ)`
//! followed by the phase duration `T`; `ΔT = T / (N − 1)`.

use serde::{Deserialize, Serialize};

use crate::fslip::{stance_terms, FslipParams};
use crate::jet::{gradient_hessian, jacobian, Jet, Real};
use crate::nlp::{Nlp, Triplets};

pub const NODE_DIM: usize = 11;
const STATE_DIM: usize = 8;
const PATH_ROWS: usize = 5;
const STATE_NAMES: [&str; 8] = ["x", "z", "theta", "L", "xdot", "zdot", "thetadot", "Ldot"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub leg_accel: f64,
    pub foot_moment: f64,
    pub flywheel_torque: f64,
    /// Spring-oscillation penalty (landing only).
    pub spring_rate: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            leg_accel: 1e-3,
            foot_moment: 1e-3,
            flywheel_torque: 1e-3,
            spring_rate: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Jumping,
    Landing,
}

/// Conditions imposed on the final node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCondition {
    /// `ż_N = v`.
    VerticalVelocity(f64),
    /// `θ̇_N = (σ·2π − 2β_N) / T_f`: the body turns through `σ·2π − 2β`
    /// during a flight of duration `T_f`.
    PitchRate { flight_time: f64, direction: f64 },
    /// The ground reaction vanishes: `F_z = 0`, which under the friction
    /// and ZMP rows also pins `F_x = 0` and `u = 0`. The three are imposed
    /// as equalities and the last node carries no path rows.
    NoNormalForce,
    /// `x_N + ẋ_N·T_f = target` (ballistic landing abscissa).
    ForwardReach { flight_time: f64, target: f64 },
    /// `|β_N| ≤ limit` (two inequality rows).
    LegAngleLimit(f64),
    /// `z_N = h`.
    Height(f64),
    /// `x_N = p`.
    Position(f64),
    /// `ẋ_N = ż_N = θ̇_N = L̇_N = 0`.
    Rest,
    /// `F^s_N = f`.
    SpringForce(f64),
}

impl TerminalCondition {
    fn eq_rows(&self) -> usize {
        match self {
            TerminalCondition::LegAngleLimit(_) => 0,
            TerminalCondition::Rest => 4,
            TerminalCondition::NoNormalForce => 3,
            _ => 1,
        }
    }

    fn ineq_rows(&self) -> usize {
        match self {
            TerminalCondition::LegAngleLimit(_) => 2,
            _ => 0,
        }
    }

    fn names(&self) -> Vec<String> {
        let s = |v: &str| vec![v.to_string()];
        match self {
            TerminalCondition::VerticalVelocity(v) => {
                s(&format!("terminal vertical velocity = {v}"))
            }
            TerminalCondition::PitchRate { .. } => s("terminal pitch rate for flip"),
            TerminalCondition::NoNormalForce => vec![
                "terminal normal force = 0".into(),
                "terminal tangential force = 0".into(),
                "terminal foot moment = 0".into(),
            ],
            TerminalCondition::ForwardReach { target, .. } => {
                s(&format!("terminal forward reach = {target}"))
            }
            TerminalCondition::LegAngleLimit(b) => {
                vec![
                    format!("terminal leg angle <= {b}"),
                    format!("terminal leg angle >= -{b}"),
                ]
            }
            TerminalCondition::Height(h) => s(&format!("terminal height = {h}")),
            TerminalCondition::Position(p) => s(&format!("terminal position = {p}")),
            TerminalCondition::Rest => ["xdot", "zdot", "thetadot", "Ldot"]
                .iter()
                .map(|v| format!("terminal rest ({v} = 0)"))
                .collect(),
            TerminalCondition::SpringForce(f) => s(&format!("terminal spring force = {f}")),
        }
    }
}

/// A transcribed stance-phase trajectory optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpProblem {
    pub kind: PhaseKind,
    pub params: FslipParams,
    pub nodes: usize,
    pub foot_x: f64,
    pub weights: CostWeights,
    pub duration_bounds: [f64; 2],
    /// Pinned state of node 0.
    pub initial: [f64; 8],
    pub terminal: Vec<TerminalCondition>,
    /// End state used by [`default_guess`](super::default_guess).
    pub guess_terminal: [f64; 8],
    /// Duration used by [`default_guess`](super::default_guess).
    pub guess_duration: f64,
    /// Lower bound on the mass height.
    pub min_height: f64,
}

/// Per-node outputs: 8 rates, 5 path rows, 1 cost integrand.
const NODE_OUT: usize = STATE_DIM + PATH_ROWS + 1;

impl NlpProblem {
    pub fn num_eq_rows(&self) -> usize {
        STATE_DIM * self.nodes + self.terminal.iter().map(|t| t.eq_rows()).sum::<usize>()
    }

    /// Nodes carrying the five path rows.
    pub fn path_nodes(&self) -> usize {
        if self.terminal.contains(&TerminalCondition::NoNormalForce) {
            self.nodes - 1
        } else {
            self.nodes
        }
    }

    pub fn num_ineq_rows(&self) -> usize {
        PATH_ROWS * self.path_nodes() + self.terminal.iter().map(|t| t.ineq_rows()).sum::<usize>()
    }

    pub fn duration_index(&self) -> usize {
        NODE_DIM * self.nodes
    }

    pub fn node<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        &x[NODE_DIM * k..NODE_DIM * (k + 1)]
    }

    pub fn step(&self, x: &[f64]) -> f64 {
        x[self.duration_index()] / (self.nodes - 1) as f64
    }

    /// Rates, path rows and cost integrand of one node.
    pub(crate) fn node_outputs<T: Real>(&self, v: &[T]) -> Vec<T> {
        let p = &self.params;
        let st = stance_terms(p, v, self.foot_x);
        let mg = p.weight();
        let half = 0.5 * p.foot_length;
        let u = v[9];
        let mut out = Vec::with_capacity(NODE_OUT);
        out.extend_from_slice(&st.rates);
        out.push(-st.fz / mg);
        out.push((st.fx - st.fz * p.friction_mu) / mg);
        out.push((-st.fx - st.fz * p.friction_mu) / mg);
        out.push((u - st.fz * half) / (mg * half));
        out.push((-u - st.fz * half) / (mg * half));
        let w = &self.weights;
        let mut cost =
            v[8] * v[8] * w.leg_accel + u * u * w.foot_moment + v[10] * v[10] * w.flywheel_torque;
        if self.kind == PhaseKind::Landing {
            cost += st.sdot * st.sdot * w.spring_rate;
        }
        out.push(cost);
        out
    }

    /// `(equality rows, inequality rows)` of the terminal conditions.
    pub(crate) fn terminal_rows<T: Real>(&self, v: &[T]) -> (Vec<T>, Vec<T>) {
        let p = &self.params;
        let st = stance_terms(p, v, self.foot_x);
        let mg = p.weight();
        let (mut eq, mut ineq) = (Vec::new(), Vec::new());
        for c in &self.terminal {
            match *c {
                TerminalCondition::VerticalVelocity(z) => eq.push(v[5] - z),
                TerminalCondition::PitchRate {
                    flight_time,
                    direction,
                } => eq.push(
                    v[6] - (st.beta * -2.0 + direction * 2.0 * std::f64::consts::PI) / flight_time,
                ),
                TerminalCondition::NoNormalForce => {
                    eq.push(st.fz / mg);
                    eq.push(st.fx / mg);
                    eq.push(v[9] / (mg * 0.5 * p.foot_length));
                }
                TerminalCondition::ForwardReach {
                    flight_time,
                    target,
                } => eq.push(v[0] + v[4] * flight_time - target),
                TerminalCondition::LegAngleLimit(b) => {
                    ineq.push(st.beta - b);
                    ineq.push(-st.beta - b);
                }
                TerminalCondition::Height(h) => eq.push(v[1] - h),
                TerminalCondition::Position(x) => eq.push(v[0] - x),
                TerminalCondition::Rest => eq.extend([v[4], v[5], v[6], v[7]]),
                TerminalCondition::SpringForce(f) => eq.push((st.spring_force - f) / mg),
            }
        }
        (eq, ineq)
    }

    fn node_jacobian(&self, v: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        jacobian(|j: &[Jet]| self.node_outputs(j), v)
    }

    fn terminal_jacobian(&self, v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let ne = self.terminal.iter().map(|t| t.eq_rows()).sum::<usize>();
        let (_, jac) = jacobian(
            |j: &[Jet]| {
                let (mut e, i) = self.terminal_rows(j);
                e.extend(i);
                e
            },
            v,
        );
        let mut jac = jac;
        let ji = jac.split_off(ne.min(jac.len()));
        (jac, ji)
    }
}

impl Nlp for NlpProblem {
    fn num_vars(&self) -> usize {
        NODE_DIM * self.nodes + 1
    }

    fn num_eq(&self) -> usize {
        self.num_eq_rows()
    }

    fn num_ineq(&self) -> usize {
        self.num_ineq_rows()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let inf = f64::INFINITY;
        let mut lo = [-inf; NODE_DIM];
        let mut hi = [inf; NODE_DIM];
        lo[1] = self.min_height;
        lo[3] = p.leg_length_bounds[0];
        hi[3] = p.leg_length_bounds[1];
        for (i, b) in [
            (8, p.leg_accel_bound),
            (9, p.foot_moment_bound),
            (10, p.flywheel_torque_bound),
        ] {
            lo[i] = -b;
            hi[i] = b;
        }
        let mut lb: Vec<f64> = (0..self.nodes).flat_map(|_| lo).collect();
        let mut ub: Vec<f64> = (0..self.nodes).flat_map(|_| hi).collect();
        lb.push(self.duration_bounds[0]);
        ub.push(self.duration_bounds[1]);
        (lb, ub)
    }

    fn scale(&self) -> Vec<f64> {
        let p = &self.params;
        let node = [
            0.5,
            0.5,
            1.0,
            0.5,
            2.0,
            2.0,
            5.0,
            1.0,
            0.5 * p.leg_accel_bound,
            0.5 * p.foot_moment_bound,
            0.5 * p.flywheel_torque_bound,
        ];
        let mut s: Vec<f64> = (0..self.nodes).flat_map(|_| node).collect();
        s.push(0.5);
        s
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let dt = self.step(x);
        (0..self.nodes)
            .map(|k| self.node_outputs(self.node(x, k))[NODE_OUT - 1])
            .sum::<f64>()
            * dt
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let dt = self.step(x);
        let mut g = vec![0.0; self.num_vars()];
        let mut total = 0.0;
        for k in 0..self.nodes {
            let (val, jac) = self.node_jacobian(self.node(x, k));
            total += val[NODE_OUT - 1];
            for (j, d) in jac[NODE_OUT - 1].iter().enumerate() {
                g[NODE_DIM * k + j] = d * dt;
            }
        }
        g[self.duration_index()] = total / (self.nodes - 1) as f64;
        g
    }

    fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes;
        let dt = self.step(x);
        let outs: Vec<Vec<f64>> = (0..n).map(|k| self.node_outputs(self.node(x, k))).collect();
        let mut ce = Vec::with_capacity(self.num_eq_rows());
        let mut ci = Vec::with_capacity(self.num_ineq_rows());
        let v0 = self.node(x, 0);
        ce.extend((0..STATE_DIM).map(|i| v0[i] - self.initial[i]));
        for k in 0..n - 1 {
            let (a, b) = (self.node(x, k), self.node(x, k + 1));
            ce.extend(
                (0..STATE_DIM).map(|i| b[i] - a[i] - 0.5 * dt * (outs[k][i] + outs[k + 1][i])),
            );
        }
        for o in &outs[..self.path_nodes()] {
            ci.extend_from_slice(&o[STATE_DIM..STATE_DIM + PATH_ROWS]);
        }
        let (te, ti) = self.terminal_rows(self.node(x, n - 1));
        ce.extend(te);
        ci.extend(ti);
        (ce, ci)
    }

    fn jacobians(&self, x: &[f64]) -> (Triplets, Triplets) {
        let n = self.nodes;
        let dt = self.step(x);
        let ti = self.duration_index();
        let dd = 1.0 / (n - 1) as f64;
        let evals: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n)
            .map(|k| self.node_jacobian(self.node(x, k)))
            .collect();
        let mut je = Vec::new();
        let mut jin = Vec::new();
        for i in 0..STATE_DIM {
            je.push((i, i, 1.0));
        }
        for k in 0..n - 1 {
            let row0 = STATE_DIM * (k + 1);
            for i in 0..STATE_DIM {
                let r = row0 + i;
                for (kk, sign) in [(k, -1.0), (k + 1, 1.0)] {
                    let col0 = NODE_DIM * kk;
                    let jf = &evals[kk].1[i];
                    for j in 0..NODE_DIM {
                        let mut v = -0.5 * dt * jf[j];
                        if j == i {
                            v += sign;
                        }
                        if v != 0.0 {
                            je.push((r, col0 + j, v));
                        }
                    }
                }
                je.push((r, ti, -0.5 * dd * (evals[k].0[i] + evals[k + 1].0[i])));
            }
        }
        for (k, (_, jac)) in evals.iter().enumerate().take(self.path_nodes()) {
            for p in 0..PATH_ROWS {
                for (j, &v) in jac[STATE_DIM + p].iter().enumerate() {
                    if v != 0.0 {
                        jin.push((PATH_ROWS * k + p, NODE_DIM * k + j, v));
                    }
                }
            }
        }
        let last = NODE_DIM * (n - 1);
        let (te, tin) = self.terminal_jacobian(self.node(x, n - 1));
        let e0 = STATE_DIM * n;
        for (r, row) in te.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    je.push((e0 + r, last + j, v));
                }
            }
        }
        let i0 = PATH_ROWS * self.path_nodes();
        for (r, row) in tin.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    jin.push((i0 + r, last + j, v));
                }
            }
        }
        (je, jin)
    }

    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], mu: &[f64]) -> Option<Triplets> {
        let n = self.nodes;
        let dt = self.step(x);
        let dd = 1.0 / (n - 1) as f64;
        let ti = self.duration_index();
        let ne_term = self.terminal.iter().map(|t| t.eq_rows()).sum::<usize>();
        let lam_term = &lambda[STATE_DIM * n..STATE_DIM * n + ne_term];
        let np = self.path_nodes();
        let mu_term = &mu[PATH_ROWS * np..];
        let mut out = Vec::new();
        for k in 0..n {
            let mut w = [0.0; STATE_DIM];
            for (seg, present) in [(k.wrapping_sub(1), k >= 1), (k, k + 1 < n)] {
                if present {
                    let l = &lambda[STATE_DIM * (seg + 1)..STATE_DIM * (seg + 2)];
                    for i in 0..STATE_DIM {
                        w[i] -= 0.5 * l[i];
                    }
                }
            }
            let mk = if k < np {
                &mu[PATH_ROWS * k..PATH_ROWS * (k + 1)]
            } else {
                &[0.0; PATH_ROWS][..]
            };
            let is_last = k == n - 1;
            let f = |v: &[Jet]| {
                let o = self.node_outputs(v);
                let mut acc = o[NODE_OUT - 1] * (sigma * dt);
                for i in 0..STATE_DIM {
                    acc += o[i] * (w[i] * dt);
                }
                for p in 0..PATH_ROWS {
                    acc += o[STATE_DIM + p] * mk[p];
                }
                if is_last {
                    let (te, tin) = self.terminal_rows(v);
                    for (r, l) in te.iter().zip(lam_term) {
                        acc += *r * *l;
                    }
                    for (r, m) in tin.iter().zip(mu_term) {
                        acc += *r * *m;
                    }
                }
                acc
            };
            let v = self.node(x, k);
            let (_, _, h) = gradient_hessian(f, v);
            let c0 = NODE_DIM * k;
            for i in 0..NODE_DIM {
                for j in i..NODE_DIM {
                    if h[i][j] != 0.0 {
                        out.push((c0 + i, c0 + j, h[i][j]));
                    }
                }
            }
            let (_, jac) = self.node_jacobian(v);
            for j in 0..NODE_DIM {
                let mut c = sigma * jac[NODE_OUT - 1][j];
                for i in 0..STATE_DIM {
                    c += w[i] * jac[i][j];
                }
                if c != 0.0 {
                    out.push((c0 + j, ti, c * dd));
                }
            }
        }
        Some(out)
    }

    fn eq_name(&self, i: usize) -> String {
        let n = self.nodes;
        if i < STATE_DIM {
            return format!("initial {}", STATE_NAMES[i]);
        }
        if i < STATE_DIM * n {
            let k = i / STATE_DIM - 1;
            return format!(
                "dynamics defect {}->{} ({})",
                k,
                k + 1,
                STATE_NAMES[i % STATE_DIM]
            );
        }
        let names: Vec<String> = self
            .terminal
            .iter()
            .flat_map(|t| if t.eq_rows() > 0 { t.names() } else { vec![] })
            .collect();
        names
            .get(i - STATE_DIM * n)
            .cloned()
            .unwrap_or_else(|| format!("eq[{i}]"))
    }

    fn ineq_name(&self, i: usize) -> String {
        let np = self.path_nodes();
        if i < PATH_ROWS * np {
            let k = i / PATH_ROWS;
            let what = [
                "normal force >= 0",
                "friction (+x)",
                "friction (-x)",
                "ZMP (+)",
                "ZMP (-)",
            ][i % PATH_ROWS];
            return format!("{what} at node {k}");
        }
        let names: Vec<String> = self
            .terminal
            .iter()
            .flat_map(|t| if t.ineq_rows() > 0 { t.names() } else { vec![] })
            .collect();
        names
            .get(i - PATH_ROWS * np)
            .cloned()
            .unwrap_or_else(|| format!("ineq[{i}]"))
    }
}
