//! Primal-dual interior-point method with a filter line search.
//!
//! Inequalities become equalities with nonnegative slacks, and every bound
//! is handled by a logarithmic barrier. Each Newton step solves the sparse
//! symmetric indefinite KKT system with an LDLᵀ factorization whose Hessian
//! block is shifted until the inertia is right. When the filter rejects
//! every step size, a Gauss–Newton restoration phase reduces the constraint
//! violation instead.

use clarabel::algebra::CscMatrix;
use clarabel::qdldl::{QDLDLFactorisation, QDLDLSettings};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{worst_violations, Nlp, NlpError, NlpResult, SolveStatus, Triplets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Max-norm tolerance on constraint violation.
    pub feas_tol: f64,
    /// Max-norm tolerance on the Lagrangian gradient (scaled variables) and
    /// on complementarity.
    pub stationarity_tol: f64,
    /// Use the problem's Hessian when it provides one.
    pub exact_hessian: bool,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            feas_tol: 1e-9,
            stationarity_tol: 1e-6,
            exact_hessian: true,
            verbose: false,
        }
    }
}

const MU_INIT: f64 = 0.1;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const BOUND_PUSH: f64 = 1e-2;
const BOUND_RELAX: f64 = 1e-8;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const DELTA_SWITCH: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const KAPPA_SIGMA: f64 = 1e10;
const KAPPA_SOC: f64 = 0.99;
const MAX_SOC: usize = 4;
const REG_C: f64 = 1e-9;
const MAX_REG: f64 = 1e40;
const MAX_RESTORATION: usize = 100;

/// The problem in scaled variables `w = [x / scale, slacks]` with
/// constraints `c(w) = [c_E(x), c_I(x) + s] = 0`.
struct Layout<'a, P: ?Sized> {
    p: &'a P,
    scale: Vec<f64>,
    n: usize,
    me: usize,
    mi: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

struct Eval {
    f: f64,
    c: Vec<f64>,
}

impl<'a, P: Nlp + ?Sized> Layout<'a, P> {
    fn new(p: &'a P) -> Result<Self, NlpError> {
        let (n, me, mi) = (p.num_vars(), p.num_eq(), p.num_ineq());
        let scale = p.scale();
        let (lb, ub) = p.bounds();
        if scale.len() != n || lb.len() != n || ub.len() != n {
            return Err(NlpError::Dimension("scale or bounds length".into()));
        }
        if let Some(i) = scale.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(NlpError::Dimension(format!("scale[{i}] must be positive")));
        }
        let mut lo = vec![f64::NEG_INFINITY; n + mi];
        let mut hi = vec![f64::INFINITY; n + mi];
        for i in 0..n {
            if lb[i] > ub[i] {
                return Err(NlpError::Dimension(format!("bound[{i}] is empty")));
            }
            if lb[i].is_finite() {
                let l = lb[i] / scale[i];
                lo[i] = l - BOUND_RELAX * l.abs().max(1.0);
            }
            if ub[i].is_finite() {
                let u = ub[i] / scale[i];
                hi[i] = u + BOUND_RELAX * u.abs().max(1.0);
            }
        }
        for v in &mut lo[n..] {
            *v = 0.0;
        }
        Ok(Self {
            p,
            scale,
            n,
            me,
            mi,
            lo,
            hi,
        })
    }

    fn nw(&self) -> usize {
        self.n + self.mi
    }

    fn m(&self) -> usize {
        self.me + self.mi
    }

    fn x(&self, w: &[f64]) -> Vec<f64> {
        w[..self.n]
            .iter()
            .zip(&self.scale)
            .map(|(a, b)| a * b)
            .collect()
    }

    fn eval(&self, w: &[f64]) -> Result<Eval, NlpError> {
        let x = self.x(w);
        let f = self.p.objective(&x);
        let (ce, ci) = self.p.constraints(&x);
        if ce.len() != self.me || ci.len() != self.mi {
            return Err(NlpError::Dimension(format!(
                "constraint lengths ({}, {}) differ from declared ({}, {})",
                ce.len(),
                ci.len(),
                self.me,
                self.mi
            )));
        }
        if !f.is_finite() {
            return Err(NlpError::NonFinite("objective".into()));
        }
        if let Some(i) = ce.iter().position(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite(self.p.eq_name(i)));
        }
        if let Some(i) = ci.iter().position(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite(self.p.ineq_name(i)));
        }
        let mut c = ce;
        c.extend(ci.iter().zip(&w[self.n..]).map(|(a, s)| a + s));
        Ok(Eval { f, c })
    }

    /// Objective gradient and constraint Jacobian.
    fn derivs(&self, w: &[f64]) -> Result<(Vec<f64>, Triplets), NlpError> {
        let x = self.x(w);
        let mut g = self.p.gradient(&x);
        if g.len() != self.n {
            return Err(NlpError::Dimension("gradient length".into()));
        }
        for (gi, si) in g.iter_mut().zip(&self.scale) {
            *gi *= si;
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite(format!("objective gradient[{i}]")));
        }
        g.resize(self.nw(), 0.0);
        let (je, ji) = self.p.jacobians(&x);
        let mut a = Vec::with_capacity(je.len() + ji.len() + self.mi);
        for (rows, offset) in [(je, 0), (ji, self.me)] {
            for (i, j, v) in rows {
                let v = v * self.scale[j];
                if !v.is_finite() {
                    let name = if offset == 0 {
                        self.p.eq_name(i)
                    } else {
                        self.p.ineq_name(i)
                    };
                    return Err(NlpError::NonFinite(format!("derivative of {name}")));
                }
                a.push((i + offset, j, v));
            }
        }
        for k in 0..self.mi {
            a.push((self.me + k, self.n + k, 1.0));
        }
        Ok((g, a))
    }

    fn hessian(&self, w: &[f64], lam: &[f64]) -> Option<Result<Triplets, NlpError>> {
        let x = self.x(w);
        let t = self.p.hessian(&x, 1.0, &lam[..self.me], &lam[self.me..])?;
        let mut out = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            if !v.is_finite() {
                return Some(Err(NlpError::NonFinite(format!(
                    "Hessian entry ({i}, {j})"
                ))));
            }
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            out.push((i, j, v * self.scale[i] * self.scale[j]));
        }
        Some(Ok(out))
    }

    fn barrier(&self, w: &[f64], f: f64, mu: f64) -> f64 {
        let mut phi = f;
        for i in 0..w.len() {
            if self.lo[i].is_finite() {
                phi -= mu * (w[i] - self.lo[i]).ln();
            }
            if self.hi[i].is_finite() {
                phi -= mu * (self.hi[i] - w[i]).ln();
            }
        }
        phi
    }

    /// Barrier gradient `∇f − μ/(w − l) + μ/(u − w)`.
    fn barrier_gradient(&self, w: &[f64], g: &[f64], mu: f64) -> Vec<f64> {
        let mut out = g.to_vec();
        for i in 0..w.len() {
            if self.lo[i].is_finite() {
                out[i] -= mu / (w[i] - self.lo[i]);
            }
            if self.hi[i].is_finite() {
                out[i] += mu / (self.hi[i] - w[i]);
            }
        }
        out
    }

    fn sigma(&self, w: &[f64], zl: &[f64], zu: &[f64]) -> Vec<f64> {
        (0..w.len())
            .map(|i| {
                let mut s = 0.0;
                if self.lo[i].is_finite() {
                    s += zl[i] / (w[i] - self.lo[i]);
                }
                if self.hi[i].is_finite() {
                    s += zu[i] / (self.hi[i] - w[i]);
                }
                s
            })
            .collect()
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|a| a.abs()).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += Aᵀv`.
fn add_transpose_mul(a: &Triplets, v: &[f64], out: &mut [f64]) {
    for &(i, j, x) in a {
        out[j] += x * v[i];
    }
}

/// `out = S x` for a symmetric matrix given by its upper triangle.
fn sym_mul(upper: &Triplets, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for &(i, j, v) in upper {
        out[i] += v * x[j];
        if i != j {
            out[j] += v * x[i];
        }
    }
    out
}

/// Largest step in `(0, 1]` keeping `w + α d` a fraction `tau` away from
/// the bounds.
fn fraction_to_boundary(w: &[f64], d: &[f64], lo: &[f64], hi: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..w.len() {
        if d[i] < 0.0 && lo[i].is_finite() {
            alpha = alpha.min(-tau * (w[i] - lo[i]) / d[i]);
        }
        if d[i] > 0.0 && hi[i].is_finite() {
            alpha = alpha.min(tau * (hi[i] - w[i]) / d[i]);
        }
    }
    alpha
}

fn positive_step(z: &[f64], dz: &[f64], tau: f64) -> f64 {
    z.iter()
        .zip(dz)
        .filter(|(zi, di)| **di < 0.0 && **zi > 0.0)
        .fold(1.0, |a: f64, (zi, di)| a.min(-tau * zi / di))
}

/// KKT matrix `[H + Σ + δI, Aᵀ; A, 0]` in factored form.
struct Kkt {
    /// Upper triangle without the dual regularization, for refinement.
    upper: Triplets,
    fact: QDLDLFactorisation<f64>,
}

impl Kkt {
    fn solve(&mut self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.fact.solve(&mut x);
        let scale = 1.0 + max_abs(rhs);
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let kx = sym_mul(&self.upper, &x);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            let norm = max_abs(&r);
            if norm <= 1e-14 * scale || norm >= best {
                break;
            }
            best = norm;
            self.fact.solve(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        x
    }
}

fn factor(upper: &Triplets, dim: usize, nw: usize, delta_w: f64) -> Option<Kkt> {
    let mut t = upper.clone();
    for i in 0..dim {
        t.push((i, i, if i < nw { delta_w } else { 0.0 }));
    }
    let (ii, jj, vv): (Vec<_>, Vec<_>, Vec<_>) = t
        .iter()
        .map(|&(i, j, v)| (i, j, if i == j && i >= nw { v - REG_C } else { v }))
        .fold((vec![], vec![], vec![]), |mut acc, (i, j, v)| {
            acc.0.push(i);
            acc.1.push(j);
            acc.2.push(v);
            acc
        });
    let k = CscMatrix::new_from_triplets(dim, dim, ii, jj, vv);
    let settings = QDLDLSettings {
        regularize_enable: false,
        ..Default::default()
    };
    let fact = QDLDLFactorisation::new(&k, Some(settings)).ok()?;
    if fact.positive_inertia() != nw || fact.D.iter().any(|d| !d.is_finite() || *d == 0.0) {
        return None;
    }
    Some(Kkt { upper: t, fact })
}

/// Factorizes with the smallest Hessian shift (from a geometric sequence)
/// that gives `nw` positive and `m` negative eigenvalues.
fn factor_with_inertia(
    upper: &Triplets,
    dim: usize,
    nw: usize,
    last: &mut f64,
) -> Option<(Kkt, f64)> {
    if let Some(k) = factor(upper, dim, nw, 0.0) {
        return Some((k, 0.0));
    }
    let mut delta = if *last == 0.0 {
        1e-4
    } else {
        (*last / 3.0).max(1e-20)
    };
    loop {
        if let Some(k) = factor(upper, dim, nw, delta) {
            *last = delta;
            return Some((k, delta));
        }
        delta *= if *last == 0.0 { 100.0 } else { 8.0 };
        if delta > MAX_REG {
            return None;
        }
    }
}

fn kkt_upper(nw: usize, hess: &Triplets, sigma: &[f64], a: &Triplets) -> Triplets {
    let mut t = Vec::with_capacity(hess.len() + sigma.len() + a.len());
    t.extend_from_slice(hess);
    t.extend(sigma.iter().enumerate().map(|(i, &s)| (i, i, s)));
    t.extend(a.iter().map(|&(r, j, v)| (j, nw + r, v)));
    t
}

/// Multipliers minimizing the Lagrangian gradient norm; zero when they come
/// out implausibly large.
fn least_squares_multipliers(nw: usize, m: usize, a: &Triplets, rhs: &[f64]) -> Vec<f64> {
    let unit = vec![1.0; nw];
    let upper = kkt_upper(nw, &vec![], &unit, a);
    let Some(mut k) = factor(&upper, nw + m, nw, 0.0) else {
        return vec![0.0; m];
    };
    let mut b: Vec<f64> = rhs.iter().map(|v| -v).collect();
    b.resize(nw + m, 0.0);
    let sol = k.solve(&b);
    let lam = sol[nw..].to_vec();
    if max_abs(&lam) > 1e3 || lam.iter().any(|v| !v.is_finite()) {
        vec![0.0; m]
    } else {
        lam
    }
}

fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-16) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 1e-16) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

struct Filter {
    entries: Vec<(f64, f64)>,
}

impl Filter {
    fn acceptable(&self, theta: f64, phi: f64) -> bool {
        self.entries.iter().all(|&(t, p)| theta < t || phi < p)
    }

    fn add(&mut self, theta: f64, phi: f64) {
        self.entries.retain(|&(t, p)| t < theta || p < phi);
        self.entries.push((theta, phi));
    }
}

struct State {
    w: Vec<f64>,
    lam: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    ev: Eval,
}

enum Restoration {
    Done,
    Infeasible,
    Failed,
}

/// Gauss–Newton steps on `‖c‖²` with a proximal barrier metric, until the
/// violation drops by 10% and the point is acceptable to the filter.
fn restore<P: Nlp + ?Sized>(
    lay: &Layout<P>,
    st: &mut State,
    filter: &Filter,
    mu: f64,
    verbose: bool,
) -> Result<Restoration, NlpError> {
    let nw = lay.nw();
    let m = lay.m();
    let theta0 = l1(&st.ev.c);
    let zeta = mu.sqrt().max(1e-8);
    for k in 0..MAX_RESTORATION {
        let (_, a) = lay.derivs(&st.w)?;
        let mut atc = vec![0.0; nw];
        add_transpose_mul(&a, &st.ev.c, &mut atc);
        let theta = l1(&st.ev.c);
        if max_abs(&atc) <= 1e-10 * max_abs(&st.ev.c).max(1.0) {
            return Ok(if max_abs(&st.ev.c) > 0.0 {
                Restoration::Infeasible
            } else {
                Restoration::Failed
            });
        }
        let mut sigma = lay.sigma(&st.w, &st.zl, &st.zu);
        for s in &mut sigma {
            *s += zeta;
        }
        let upper = kkt_upper(nw, &vec![], &sigma, &a);
        let Some(mut kkt) = factor(&upper, nw + m, nw, 0.0) else {
            return Ok(Restoration::Failed);
        };
        let mut rhs = vec![0.0; nw];
        rhs.extend(st.ev.c.iter().map(|v| -v));
        let d = kkt.solve(&rhs);
        let dw = &d[..nw];
        let tau = (1.0 - mu).max(0.99);
        let mut alpha = fraction_to_boundary(&st.w, dw, &lay.lo, &lay.hi, tau);
        let mut moved = false;
        while alpha > 1e-10 {
            let wt: Vec<f64> = st.w.iter().zip(dw).map(|(a, b)| a + alpha * b).collect();
            if let Ok(ev) = lay.eval(&wt) {
                if l1(&ev.c) <= (1.0 - 1e-4 * alpha) * theta {
                    st.w = wt;
                    st.ev = ev;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            return Ok(Restoration::Infeasible);
        }
        let theta_new = l1(&st.ev.c);
        if verbose {
            println!("  restoration {k:3}  theta {theta_new:.3e}  alpha {alpha:.2e}");
        }
        let phi = lay.barrier(&st.w, st.ev.f, mu);
        if theta_new <= 0.9 * theta0 && filter.acceptable(theta_new, phi) {
            for i in 0..nw {
                if lay.lo[i].is_finite() {
                    st.zl[i] = st.zl[i].min(KAPPA_SIGMA * mu / (st.w[i] - lay.lo[i]));
                }
                if lay.hi[i].is_finite() {
                    st.zu[i] = st.zu[i].min(KAPPA_SIGMA * mu / (lay.hi[i] - st.w[i]));
                }
            }
            let (g, a) = lay.derivs(&st.w)?;
            let r: Vec<f64> = (0..nw).map(|i| g[i] - st.zl[i] + st.zu[i]).collect();
            st.lam = least_squares_multipliers(nw, m, &a, &r);
            return Ok(Restoration::Done);
        }
    }
    Ok(Restoration::Failed)
}

pub fn solve<P: Nlp + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<NlpResult, NlpError> {
    let lay = Layout::new(problem)?;
    let (n, me, mi) = (lay.n, lay.me, lay.mi);
    let (nw, m) = (lay.nw(), lay.m());
    if x0.len() != n {
        return Err(NlpError::Dimension(format!(
            "x0 has {} entries, expected {n}",
            x0.len()
        )));
    }

    let mut w = vec![0.0; nw];
    for i in 0..n {
        let (l, u) = (lay.lo[i], lay.hi[i]);
        let mut y = x0[i] / lay.scale[i];
        let mut pl = BOUND_PUSH * l.abs().max(1.0);
        let mut pu = BOUND_PUSH * u.abs().max(1.0);
        if l.is_finite() && u.is_finite() {
            pl = pl.min(BOUND_PUSH * (u - l));
            pu = pu.min(BOUND_PUSH * (u - l));
        }
        if l.is_finite() {
            y = y.max(l + pl);
        }
        if u.is_finite() {
            y = y.min(u - pu);
        }
        w[i] = y;
    }
    let ev = lay.eval(&w)?;
    for k in 0..mi {
        w[n + k] = (-ev.c[me + k]).max(BOUND_PUSH);
    }
    let ev = lay.eval(&w)?;
    let zl: Vec<f64> = lay
        .lo
        .iter()
        .map(|l| if l.is_finite() { 1.0 } else { 0.0 })
        .collect();
    let zu: Vec<f64> = lay
        .hi
        .iter()
        .map(|u| if u.is_finite() { 1.0 } else { 0.0 })
        .collect();
    let lam = {
        let (g, a) = lay.derivs(&w)?;
        let r: Vec<f64> = (0..nw).map(|i| g[i] - zl[i] + zu[i]).collect();
        least_squares_multipliers(nw, m, &a, &r)
    };
    let mut st = State { w, lam, zl, zu, ev };

    let tol = opts.stationarity_tol;
    let mu_min = tol / 10.0;
    let mut mu = MU_INIT;
    let theta_init = l1(&st.ev.c);
    let theta_max = 1e4 * theta_init.max(1.0);
    let theta_min = 1e-4 * theta_init.max(1.0);
    let mut filter = Filter { entries: vec![] };
    let mut last_shift = 0.0;
    let mut bfgs: Option<DMatrix<f64>> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let (g, a) = lay.derivs(&st.w)?;
        let mut grad_lag: Vec<f64> = (0..nw).map(|i| g[i] - st.zl[i] + st.zu[i]).collect();
        add_transpose_mul(&a, &st.lam, &mut grad_lag);
        let dual = max_abs(&grad_lag);
        let primal = max_abs(&st.ev.c);
        let gaps: Vec<(f64, f64)> = (0..nw)
            .flat_map(|i| {
                let lo = lay.lo[i]
                    .is_finite()
                    .then(|| (st.zl[i], st.w[i] - lay.lo[i]));
                let hi = lay.hi[i]
                    .is_finite()
                    .then(|| (st.zu[i], lay.hi[i] - st.w[i]));
                lo.into_iter().chain(hi)
            })
            .collect();
        let compl = gaps.iter().fold(0.0, |c: f64, (z, s)| c.max(z * s));
        stationarity = dual;
        if opts.verbose {
            println!(
                "{iter:4}  f {:+.6e}  viol {primal:.2e}  dual {dual:.2e}  compl {compl:.2e}  mu {mu:.1e}",
                st.ev.f
            );
        }
        if dual <= tol && primal <= opts.feas_tol && compl <= tol {
            status = SolveStatus::Converged;
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        let zsum: f64 = gaps.iter().map(|(z, _)| z).sum::<f64>() + l1(&st.lam);
        let s_max = 100.0;
        let s_d = (zsum / ((m + gaps.len()).max(1) as f64)).max(s_max) / s_max;
        let s_c = (gaps.iter().map(|(z, _)| z).sum::<f64>() / (gaps.len().max(1) as f64))
            .max(s_max)
            / s_max;
        loop {
            let compl_mu = gaps
                .iter()
                .fold(0.0, |c: f64, (z, s)| c.max((z * s - mu).abs()));
            let e_mu = (dual / s_d).max(primal).max(compl_mu / s_c);
            if mu <= mu_min || e_mu > KAPPA_EPS * mu {
                break;
            }
            mu = (KAPPA_MU * mu).min(mu.powf(THETA_MU)).max(mu_min);
            filter.entries.clear();
        }

        let hess = match lay.hessian(&st.w, &st.lam).filter(|_| opts.exact_hessian) {
            Some(h) => h?,
            None => {
                let b = bfgs.get_or_insert_with(|| DMatrix::identity(n, n));
                let mut t = Vec::new();
                for j in 0..n {
                    for i in 0..=j {
                        if b[(i, j)] != 0.0 {
                            t.push((i, j, b[(i, j)]));
                        }
                    }
                }
                t
            }
        };
        let sigma = lay.sigma(&st.w, &st.zl, &st.zu);
        let upper = kkt_upper(nw, &hess, &sigma, &a);
        let Some((mut kkt, shift)) = factor_with_inertia(&upper, nw + m, nw, &mut last_shift)
        else {
            status = SolveStatus::Stalled;
            break;
        };

        let grad_phi = lay.barrier_gradient(&st.w, &g, mu);
        let mut r_d = grad_phi.clone();
        add_transpose_mul(&a, &st.lam, &mut r_d);
        let mut rhs: Vec<f64> = r_d.iter().map(|v| -v).collect();
        rhs.extend(st.ev.c.iter().map(|v| -v));
        let sol = kkt.solve(&rhs);
        let dw = sol[..nw].to_vec();
        let dlam = sol[nw..].to_vec();
        let mut dzl = vec![0.0; nw];
        let mut dzu = vec![0.0; nw];
        for i in 0..nw {
            if lay.lo[i].is_finite() {
                let gap = st.w[i] - lay.lo[i];
                dzl[i] = mu / gap - st.zl[i] - st.zl[i] / gap * dw[i];
            }
            if lay.hi[i].is_finite() {
                let gap = lay.hi[i] - st.w[i];
                dzu[i] = mu / gap - st.zu[i] + st.zu[i] / gap * dw[i];
            }
        }
        let tau = (1.0 - mu).max(0.99);
        let alpha_max = fraction_to_boundary(&st.w, &dw, &lay.lo, &lay.hi, tau);
        let alpha_z = positive_step(&st.zl, &dzl, tau).min(positive_step(&st.zu, &dzu, tau));

        let theta = l1(&st.ev.c);
        let phi = lay.barrier(&st.w, st.ev.f, mu);
        let gd = dot(&grad_phi, &dw);
        let alpha_min = if gd < 0.0 {
            let mut a = GAMMA_THETA.min(GAMMA_PHI * theta / -gd);
            if theta <= theta_min {
                a = a.min(DELTA_SWITCH * theta.powf(S_THETA) / (-gd).powf(S_PHI));
            }
            GAMMA_ALPHA * a
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };
        let tiny = dw
            .iter()
            .zip(&st.w)
            .all(|(d, w)| d.abs() <= 10.0 * f64::EPSILON * (1.0 + w.abs()));

        // Acceptance test of a trial point; `Some(f_type)` when accepted.
        let accept = |theta_t: f64, phi_t: f64, alpha: f64, filter: &Filter| -> Option<bool> {
            if theta_t > theta_max || !filter.acceptable(theta_t, phi_t) {
                return None;
            }
            let switching = gd < 0.0
                && theta <= theta_min
                && alpha * (-gd).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA);
            if switching {
                if phi_t <= phi + ETA_PHI * alpha * gd {
                    return Some(true);
                }
                None
            } else if theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi - GAMMA_PHI * theta {
                Some(false)
            } else {
                None
            }
        };

        let mut alpha = alpha_max;
        let mut accepted: Option<(Vec<f64>, Eval, f64, Vec<f64>, bool)> = None;
        if tiny {
            let wt: Vec<f64> = st.w.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
            if let Ok(ev) = lay.eval(&wt) {
                accepted = Some((wt, ev, alpha, dlam.clone(), true));
            }
        }
        let mut first = true;
        while accepted.is_none() && alpha >= alpha_min {
            let wt: Vec<f64> = st.w.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
            let Ok(ev) = lay.eval(&wt) else {
                alpha *= 0.5;
                first = false;
                continue;
            };
            let theta_t = l1(&ev.c);
            let phi_t = lay.barrier(&wt, ev.f, mu);
            if let Some(f_type) = accept(theta_t, phi_t, alpha, &filter) {
                accepted = Some((wt, ev, alpha, dlam.clone(), f_type));
                break;
            }
            if first && theta_t >= theta {
                // Second-order correction of the constraint linearization.
                let mut c_soc: Vec<f64> = st
                    .ev
                    .c
                    .iter()
                    .zip(&ev.c)
                    .map(|(a, b)| alpha * a + b)
                    .collect();
                let mut theta_old = theta_t;
                for _ in 0..MAX_SOC {
                    let mut rhs: Vec<f64> = r_d.iter().map(|v| -v).collect();
                    rhs.extend(c_soc.iter().map(|v| -v));
                    let s = kkt.solve(&rhs);
                    let a_soc = fraction_to_boundary(&st.w, &s[..nw], &lay.lo, &lay.hi, tau);
                    let ws: Vec<f64> =
                        st.w.iter()
                            .zip(&s[..nw])
                            .map(|(a, b)| a + a_soc * b)
                            .collect();
                    let Ok(evs) = lay.eval(&ws) else { break };
                    let theta_s = l1(&evs.c);
                    let phi_s = lay.barrier(&ws, evs.f, mu);
                    if let Some(f_type) = accept(theta_s, phi_s, alpha, &filter) {
                        accepted = Some((ws, evs, a_soc, s[nw..].to_vec(), f_type));
                        break;
                    }
                    if theta_s > KAPPA_SOC * theta_old {
                        break;
                    }
                    theta_old = theta_s;
                    for (cs, ci) in c_soc.iter_mut().zip(&evs.c) {
                        *cs = a_soc * *cs + ci;
                    }
                }
                if accepted.is_some() {
                    break;
                }
            }
            first = false;
            alpha *= 0.5;
        }

        let Some((wt, ev, alpha_taken, dl, f_type)) = accepted else {
            if opts.verbose {
                println!("  line search failed (alpha_min {alpha_min:.2e}); restoring feasibility");
            }
            filter.add((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
            match restore(&lay, &mut st, &filter, mu, opts.verbose)? {
                Restoration::Done => continue,
                Restoration::Infeasible => {
                    status = SolveStatus::Infeasible;
                    break;
                }
                Restoration::Failed => {
                    status = SolveStatus::Stalled;
                    break;
                }
            }
        };
        if !f_type {
            filter.add((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
        }
        if opts.verbose {
            println!(
                "      alpha {alpha_taken:.2e} (max {alpha_max:.2e})  alpha_z {alpha_z:.2e}  shift {shift:.1e}  |dw| {:.2e}",
                max_abs(&dw)
            );
        }

        let w_old = std::mem::replace(&mut st.w, wt);
        st.ev = ev;
        for (l, d) in st.lam.iter_mut().zip(&dl) {
            *l += alpha_taken * d;
        }
        for i in 0..nw {
            if lay.lo[i].is_finite() {
                let gap = st.w[i] - lay.lo[i];
                let z = st.zl[i] + alpha_z * dzl[i];
                st.zl[i] = z.clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
            if lay.hi[i].is_finite() {
                let gap = lay.hi[i] - st.w[i];
                let z = st.zu[i] + alpha_z * dzu[i];
                st.zu[i] = z.clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
        }

        if let Some(b) = bfgs.as_mut() {
            let (g_new, a_new) = lay.derivs(&st.w)?;
            let mut gl_new = g_new[..n].to_vec();
            gl_new.resize(nw, 0.0);
            add_transpose_mul(&a_new, &st.lam, &mut gl_new);
            let mut gl_old = g[..n].to_vec();
            gl_old.resize(nw, 0.0);
            add_transpose_mul(&a, &st.lam, &mut gl_old);
            let s = DVector::from_iterator(n, (0..n).map(|i| st.w[i] - w_old[i]));
            let y = DVector::from_iterator(n, (0..n).map(|i| gl_new[i] - gl_old[i]));
            damped_bfgs(b, &s, &y);
        }
    }

    let (lb, ub) = problem.bounds();
    let x: Vec<f64> = lay
        .x(&st.w)
        .iter()
        .enumerate()
        .map(|(i, v)| v.clamp(lb[i], ub[i]))
        .collect();
    let (ce, ci) = problem.constraints(&x);
    let bound_viol = x
        .iter()
        .enumerate()
        .fold(0.0, |v: f64, (i, xi)| v.max(lb[i] - xi).max(xi - ub[i]));
    Ok(NlpResult {
        objective: problem.objective(&x),
        max_eq_violation: max_abs(&ce),
        max_ineq_violation: ci.iter().fold(bound_viol, |v, c| v.max(*c)).max(0.0),
        lambda: st.lam[..me].to_vec(),
        mu: st.lam[me..].to_vec(),
        stationarity,
        status,
        iterations,
        worst_violations: if status == SolveStatus::Converged {
            Vec::new()
        } else {
            worst_violations(problem, &x, 5)
        },
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min ½xᵀQx + cᵀx  s.t.  Ax = b`.
    struct EqQp;

    impl Nlp for EqQp {
        fn num_vars(&self) -> usize {
            3
        }
        fn num_eq(&self) -> usize {
            2
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![f64::NEG_INFINITY; 3], vec![f64::INFINITY; 3])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[0] + 0.5 * x[1] * x[1] + 1.5 * x[2] * x[2] + x[0] * x[1] - x[0] + 2.0 * x[2]
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0] + x[1] - 1.0, x[1] + x[0], 3.0 * x[2] + 2.0]
        }
        fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![x[0] + x[1] + x[2] - 1.0, x[0] - x[2] - 0.5], vec![])
        }
        fn jacobians(&self, _x: &[f64]) -> (Triplets, Triplets) {
            (
                vec![
                    (0, 0, 1.0),
                    (0, 1, 1.0),
                    (0, 2, 1.0),
                    (1, 0, 1.0),
                    (1, 2, -1.0),
                ],
                vec![],
            )
        }
        fn hessian(&self, _x: &[f64], s: f64, _l: &[f64], _m: &[f64]) -> Option<Triplets> {
            Some(vec![(0, 0, 2.0 * s), (0, 1, s), (1, 1, s), (2, 2, 3.0 * s)])
        }
    }

    #[test]
    fn equality_qp_matches_kkt_solution() {
        // KKT system solved independently with a dense LU.
        let k = DMatrix::from_row_slice(
            5,
            5,
            &[
                2.0, 1.0, 0.0, 1.0, 1.0, //
                1.0, 1.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 3.0, 1.0, -1.0, //
                1.0, 1.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, -1.0, 0.0, 0.0,
            ],
        );
        let rhs = DVector::from_vec(vec![1.0, 0.0, -2.0, 1.0, 0.5]);
        let kkt = k.lu().solve(&rhs).unwrap();
        let r = solve(&EqQp, &[5.0, -3.0, 2.0], &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        for i in 0..3 {
            assert!((r.x[i] - kkt[i]).abs() < 1e-8, "{:?} vs {kkt}", r.x);
        }
        for i in 0..2 {
            assert!((r.lambda[i] - kkt[3 + i]).abs() < 1e-7);
        }
    }

    struct Rosenbrock {
        exact: bool,
    }

    impl Nlp for Rosenbrock {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-1.5, -0.5], vec![2.0, 2.0])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        }
        fn constraints(&self, _x: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![], vec![])
        }
        fn jacobians(&self, _x: &[f64]) -> (Triplets, Triplets) {
            (vec![], vec![])
        }
        fn hessian(&self, x: &[f64], s: f64, _l: &[f64], _m: &[f64]) -> Option<Triplets> {
            self.exact.then(|| {
                vec![
                    (0, 0, s * (2.0 - 400.0 * x[1] + 1200.0 * x[0] * x[0])),
                    (0, 1, s * (-400.0 * x[0])),
                    (1, 1, s * 200.0),
                ]
            })
        }
    }

    #[test]
    fn rosenbrock_with_bounds() {
        for exact in [true, false] {
            let r = solve(
                &Rosenbrock { exact },
                &[-1.2, 1.0],
                &SolverOptions::default(),
            )
            .unwrap();
            assert_eq!(r.status, SolveStatus::Converged, "exact = {exact}");
            assert!(
                (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
                "{:?}",
                r.x
            );
        }
    }

    /// Hock–Schittkowski 71.
    struct Hs71;

    impl Nlp for Hs71 {
        fn num_vars(&self) -> usize {
            4
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![1.0; 4], vec![5.0; 4])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![
                x[3] * (2.0 * x[0] + x[1] + x[2]),
                x[0] * x[3],
                x[0] * x[3] + 1.0,
                x[0] * (x[0] + x[1] + x[2]),
            ]
        }
        fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (
                vec![x.iter().map(|v| v * v).sum::<f64>() - 40.0],
                vec![25.0 - x.iter().product::<f64>()],
            )
        }
        fn jacobians(&self, x: &[f64]) -> (Triplets, Triplets) {
            let p: f64 = x.iter().product();
            (
                (0..4).map(|i| (0, i, 2.0 * x[i])).collect(),
                (0..4).map(|i| (0, i, -p / x[i])).collect(),
            )
        }
        fn eq_name(&self, _i: usize) -> String {
            "sphere".into()
        }
    }

    #[test]
    fn hs71_quasi_newton() {
        let r = solve(&Hs71, &[1.0, 5.0, 5.0, 1.0], &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.objective - 17.0140173).abs() < 1e-6, "{}", r.objective);
    }

    struct Contradiction;

    impl Nlp for Contradiction {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-1.0], vec![1.0])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0]]
        }
        fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![x[0] * x[0] + 1.0], vec![])
        }
        fn jacobians(&self, x: &[f64]) -> (Triplets, Triplets) {
            (vec![(0, 0, 2.0 * x[0])], vec![])
        }
        fn eq_name(&self, _i: usize) -> String {
            "unreachable".into()
        }
    }

    #[test]
    fn infeasible_problem_is_reported_with_names() {
        let r = solve(&Contradiction, &[0.5], &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert_eq!(r.worst_violations[0].name, "unreachable");
    }

    struct NanConstraint;

    impl Nlp for NanConstraint {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![f64::NEG_INFINITY], vec![f64::INFINITY])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn gradient(&self, _x: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
        fn constraints(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
            (vec![], vec![(x[0] - 2.0).sqrt()])
        }
        fn jacobians(&self, _x: &[f64]) -> (Triplets, Triplets) {
            (vec![], vec![(0, 0, 1.0)])
        }
        fn ineq_name(&self, _i: usize) -> String {
            "root of x minus two".into()
        }
    }

    #[test]
    fn nan_names_the_constraint() {
        let e = solve(&NanConstraint, &[0.0], &SolverOptions::default()).unwrap_err();
        assert_eq!(e, NlpError::NonFinite("root of x minus two".into()));
    }
}
