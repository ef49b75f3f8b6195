//! Hybrid simulation: fixed-step RK4 inside zero-order-hold control ticks,
//! with lift-off and touch-down located by bisection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::dynamics::{
    constrained_from, free_from, impact_map, project_to_anchor, ContactSet, Eom,
};
use super::momentum;
use super::{Domain, PlanarRobotModel, Result, RobotError, RobotState, VecQ, VecU, NQ};

pub trait Controller {
    /// Input held over the tick starting at `state.time`.
    fn control(&mut self, model: &PlanarRobotModel, state: &RobotState) -> VecU;

    /// Called after each domain switch; an error aborts the run.
    fn on_event(
        &mut self,
        _model: &PlanarRobotModel,
        _event: &SimEvent,
    ) -> std::result::Result<(), String> {
        Ok(())
    }
}

impl<F: FnMut(&PlanarRobotModel, &RobotState) -> VecU> Controller for F {
    fn control(&mut self, model: &PlanarRobotModel, state: &RobotState) -> VecU {
        self(model, state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt_ctrl: f64,
    pub dt_int: f64,
    pub event_tol: f64,
    pub t_max: f64,
    /// Height of the surface the foot lands on.
    pub landing_ground: f64,
    pub stop_at_liftoff: bool,
    /// Stop this long after touch-down.
    pub stop_after_touchdown: Option<f64>,
    /// Abort once ‖q̇‖ exceeds this.
    pub max_rate: f64,
    /// Foot height above the landing surface that arms touch-down.
    pub touchdown_clearance: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt_ctrl: 5e-4,
            dt_int: 1e-4,
            event_tol: 1e-8,
            t_max: 10.0,
            landing_ground: 0.0,
            stop_at_liftoff: false,
            stop_after_touchdown: None,
            max_rate: 1e4,
            touchdown_clearance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    LiftOff,
    TouchDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub kind: SimEventKind,
    pub time: f64,
    /// Guard bracket `[t_lo, t_hi]` and the guard values at its ends.
    pub bracket: [f64; 2],
    pub guard: [f64; 2],
    pub pre: RobotState,
    pub post: RobotState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub domain: Domain,
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub u: [f64; 4],
    pub fz: f64,
    pub fx: f64,
    /// Foot moment.
    pub my: f64,
    pub h_pitch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimOutcome {
    Completed,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub samples: Vec<TrajectorySample>,
    pub events: Vec<SimEvent>,
    pub final_state: RobotState,
    pub outcome: SimOutcome,
}

impl SimResult {
    pub fn event(&self, kind: SimEventKind) -> Option<&SimEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,domain");
        for i in 0..NQ {
            out += &format!(",q{i}");
        }
        for i in 0..NQ {
            out += &format!(",qd{i}");
        }
        out += ",Fz,Fx,My,H_pitch\n";
        for s in &self.samples {
            out += &format!("{},{}", s.t, s.domain.name());
            for v in s.q.iter().chain(&s.qd) {
                out += &format!(",{v}");
            }
            out += &format!(",{},{},{},{}\n", s.fz, s.fx, s.my, s.h_pitch);
        }
        out
    }
}

/// `(q̈, F)`; `F` is zero in flight.
pub(crate) fn accelerations(
    model: &PlanarRobotModel,
    q: &[f64],
    qd: &[f64],
    stance: bool,
    u: &VecU,
) -> Result<(VecQ, Vector3<f64>)> {
    let eom = Eom::new(model, q, qd);
    let b = model.actuation();
    if stance {
        let c = ContactSet::from_kinematics(&eom.kin);
        constrained_from(&eom, &b, u, &c)
    } else {
        Ok((free_from(&eom, &b, u)?, Vector3::zeros()))
    }
}

fn rk4(model: &PlanarRobotModel, s: &RobotState, u: &VecU, h: f64) -> Result<RobotState> {
    let stance = s.domain.is_stance();
    let eval = |q: &[f64; NQ], qd: &[f64; NQ]| -> Result<([f64; NQ], [f64; NQ])> {
        let (qdd, _) = accelerations(model, q, qd, stance, u)?;
        Ok((*qd, qdd.into()))
    };
    let axpy = |x: &[f64; NQ], a: f64, d: &[f64; NQ]| -> [f64; NQ] {
        std::array::from_fn(|i| x[i] + a * d[i])
    };
    let (k1q, k1v) = eval(&s.q, &s.qd)?;
    let (k2q, k2v) = eval(&axpy(&s.q, 0.5 * h, &k1q), &axpy(&s.qd, 0.5 * h, &k1v))?;
    let (k3q, k3v) = eval(&axpy(&s.q, 0.5 * h, &k2q), &axpy(&s.qd, 0.5 * h, &k2v))?;
    let (k4q, k4v) = eval(&axpy(&s.q, h, &k3q), &axpy(&s.qd, h, &k3v))?;
    let mut out = s.clone();
    for i in 0..NQ {
        out.q[i] += h / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
        out.qd[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    out.time += h;
    if stance {
        project_to_anchor(model, &mut out)?;
    }
    if !out.is_finite() {
        return Err(RobotError::NonFinite);
    }
    Ok(out)
}

fn foot_clearance(model: &PlanarRobotModel, s: &RobotState, opts: &SimOptions) -> f64 {
    super::poses(model, &s.q)[super::Body::Foot as usize][1] - opts.landing_ground
}

/// Guard value; the domain is left when it drops below zero. Touch-down is
/// armed once the foot has cleared the landing surface.
fn guard(
    model: &PlanarRobotModel,
    s: &RobotState,
    u: &VecU,
    opts: &SimOptions,
    armed: bool,
) -> Result<Option<f64>> {
    Ok(match s.domain {
        Domain::Jumping => Some(accelerations(model, &s.q, &s.qd, true, u)?.1[1]),
        Domain::Flight if armed => Some(foot_clearance(model, s, opts)),
        _ => None,
    })
}

fn sample(model: &PlanarRobotModel, s: &RobotState, u: &VecU) -> Result<TrajectorySample> {
    let (_, f) = accelerations(model, &s.q, &s.qd, s.domain.is_stance(), u)?;
    Ok(TrajectorySample {
        t: s.time,
        domain: s.domain,
        q: s.q,
        qd: s.qd,
        u: (*u).into(),
        fz: f[1],
        fx: f[0],
        my: f[2],
        h_pitch: momentum::centroidal_momentum(model, &s.q, &s.qd).h_pitch,
    })
}

fn switch(model: &PlanarRobotModel, pre: &RobotState, opts: &SimOptions) -> Result<RobotState> {
    match pre.domain {
        Domain::Jumping => {
            let mut post = pre.clone();
            post.domain = Domain::Flight;
            post.anchor = None;
            Ok(post)
        }
        _ => {
            let mut post = impact_map(model, pre)?;
            if let Some(a) = post.anchor.as_mut() {
                a.z = opts.landing_ground;
            }
            project_to_anchor(model, &mut post)?;
            Ok(post)
        }
    }
}

pub fn simulate(
    model: &PlanarRobotModel,
    controller: &mut dyn Controller,
    state0: RobotState,
    opts: &SimOptions,
) -> SimResult {
    let mut samples = Vec::new();
    let mut events: Vec<SimEvent> = Vec::new();
    let mut state = state0;
    let mut armed = false;
    let substeps = (opts.dt_ctrl / opts.dt_int).round().max(1.0) as usize;
    let h = opts.dt_ctrl / substeps as f64;
    let finish = |samples, events, state, outcome| SimResult {
        samples,
        events,
        final_state: state,
        outcome,
    };

    'ticks: loop {
        if state.time >= opts.t_max - 1e-12 {
            break;
        }
        if let (Some(after), Some(td)) = (
            opts.stop_after_touchdown,
            events.iter().find(|e| e.kind == SimEventKind::TouchDown),
        ) {
            if state.time >= td.time + after - 1e-12 {
                break;
            }
        }
        let u = controller.control(model, &state);
        if !u.iter().all(|v| v.is_finite()) {
            return finish(
                samples,
                events,
                state,
                SimOutcome::Aborted("controller returned a non-finite input".into()),
            );
        }
        match sample(model, &state, &u) {
            Ok(s) => samples.push(s),
            Err(e) => return finish(samples, events, state, SimOutcome::Aborted(e.to_string())),
        }

        for _ in 0..substeps {
            let step = (|| -> Result<(RobotState, Option<SimEvent>)> {
                let g0 = guard(model, &state, &u, opts, armed)?;
                if let Some(g0) = g0.filter(|g| *g < 0.0) {
                    // The new input already violates the guard at the tick start.
                    let post = switch(model, &state, opts)?;
                    let ev = SimEvent {
                        kind: kind_of(state.domain),
                        time: state.time,
                        bracket: [state.time, state.time],
                        guard: [g0, g0],
                        pre: state.clone(),
                        post: post.clone(),
                    };
                    return Ok((post, Some(ev)));
                }
                let next = rk4(model, &state, &u, h)?;
                let Some(g0) = g0 else {
                    return Ok((next, None));
                };
                let g1 = guard(model, &next, &u, opts, armed)?.expect("same domain");
                if g1 >= 0.0 {
                    return Ok((next, None));
                }
                let (mut lo, mut hi) = (0.0, h);
                let (mut glo, mut ghi) = (g0, g1);
                let mut hit = next;
                while hi - lo > opts.event_tol {
                    let mid = 0.5 * (lo + hi);
                    let s = rk4(model, &state, &u, mid)?;
                    let g = guard(model, &s, &u, opts, armed)?.expect("same domain");
                    if g < 0.0 {
                        hi = mid;
                        ghi = g;
                        hit = s;
                    } else {
                        lo = mid;
                        glo = g;
                    }
                }
                let post = switch(model, &hit, opts)?;
                let ev = SimEvent {
                    kind: kind_of(state.domain),
                    time: hit.time,
                    bracket: [state.time + lo, state.time + hi],
                    guard: [glo, ghi],
                    pre: hit,
                    post: post.clone(),
                };
                Ok((post, Some(ev)))
            })();
            match step {
                Err(e) => {
                    return finish(samples, events, state, SimOutcome::Aborted(e.to_string()))
                }
                Ok((next, event)) => {
                    if next.domain == Domain::Flight && !armed {
                        armed = foot_clearance(model, &next, opts) > opts.touchdown_clearance;
                    }
                    let norm = next.qd.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(norm <= opts.max_rate) {
                        let msg = format!(
                            "integration blow-up at t = {:.4} s (|qd| = {norm:e})",
                            next.time
                        );
                        return finish(samples, events, state, SimOutcome::Aborted(msg));
                    }
                    state = next;
                    if let Some(ev) = event {
                        let stop = ev.kind == SimEventKind::LiftOff && opts.stop_at_liftoff;
                        let hook = controller.on_event(model, &ev);
                        events.push(ev);
                        if let Err(msg) = hook {
                            return finish(samples, events, state, SimOutcome::Aborted(msg));
                        }
                        if stop {
                            break 'ticks;
                        }
                        continue 'ticks;
                    }
                }
            }
        }
    }
    finish(samples, events, state, SimOutcome::Completed)
}

fn kind_of(domain: Domain) -> SimEventKind {
    match domain {
        Domain::Jumping => SimEventKind::LiftOff,
        _ => SimEventKind::TouchDown,
    }
}
