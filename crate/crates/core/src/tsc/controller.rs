use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::RowSVector;
use serde::{Deserialize, Serialize};

use super::{
    desired_output_accel, grf_polytope, output_affine, output_weights, solve_tsc_qp, Gains,
    GrfConstraint, OutputOrder, OutputRow, TscProblem, TscStatus,
};
use crate::flight::{closed_loop_rate, closed_loop_rate_derivative, landing_targets, FlightPlan};
use crate::robot::{
    centroidal_momentum, differentiate, from_kinematics_map, maps_from, torque_limits, virtual_leg,
    ContactSet, Controller, Domain, Eom, Kinematics, PlanarRobotModel, Result, RobotState, VecU,
    FLYWHEEL, HIP, NQ, PITCH, TOE,
};
use crate::trajopt::ReferenceBundle;

fn unit(i: usize) -> RowSVector<f64, NQ> {
    let mut r = RowSVector::zeros();
    r[i] = 1.0;
    r
}

/// Stance tracking of an optimized template reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceTarget {
    pub reference: ReferenceBundle,
    /// Simulation time at which the reference starts.
    pub start: f64,
    /// Whole turns added to the pitch reference.
    pub pitch_offset: f64,
}

/// Flight tracking of a momentum-transmission plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightTarget {
    pub plan: FlightPlan,
    pub start: f64,
    pub hip_hold: f64,
    pub toe_hold: f64,
    /// Unwrapped leg angle at touch-down.
    pub leg_angle_target: f64,
    /// Absolute foot pitch at touch-down.
    pub foot_pitch_target: f64,
}

impl FlightTarget {
    pub fn new(model: &PlanarRobotModel, plan: FlightPlan, lift_off: &RobotState) -> Self {
        let q = &lift_off.q;
        let leg = virtual_leg(model, q, &lift_off.qd);
        let turn = 2.0 * PI * plan.direction;
        let beta_unwrapped = unwrap_near(leg.angle, q[PITCH] + q[HIP]);
        let (beta_td, toe_td) = landing_targets(plan.beta_lo);
        let foot = q[PITCH] + q[HIP] + q[TOE];
        Self {
            start: lift_off.time,
            hip_hold: q[HIP],
            toe_hold: q[TOE],
            leg_angle_target: beta_unwrapped - leg.angle + beta_td + turn,
            foot_pitch_target: 2.0 * PI * (foot / (2.0 * PI)).round() + toe_td + turn,
            plan,
        }
    }
}

/// `angle` shifted by whole turns to lie nearest `near`.
fn unwrap_near(angle: f64, near: f64) -> f64 {
    angle + 2.0 * PI * ((near - angle) / (2.0 * PI)).round()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TscMode {
    Stance(StanceTarget),
    Flight(FlightTarget),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub t: f64,
    pub domain: Domain,
    /// Y1 then the Y2 rows.
    pub outputs: Vec<f64>,
    pub u: [f64; 4],
    /// Predicted ground force (zero in flight).
    pub fz: f64,
    pub fx: f64,
    pub status: TscStatus,
    pub iterations: usize,
    pub seconds: f64,
    pub kkt_residual: f64,
    /// Largest box excess of the applied input.
    pub box_violation: f64,
}

pub struct TscController {
    pub gains: Gains,
    pub mode: TscMode,
    pub log: Vec<TickLog>,
    warm: Vec<usize>,
}

impl TscController {
    pub fn new(gains: Gains, mode: TscMode) -> Self {
        Self {
            gains,
            mode,
            log: Vec::new(),
            warm: Vec::new(),
        }
    }

    pub fn set_mode(&mut self, mode: TscMode) {
        self.mode = mode;
        self.warm.clear();
    }

    pub(crate) fn outputs(
        &self,
        model: &PlanarRobotModel,
        state: &RobotState,
        eom: &Eom,
    ) -> Vec<OutputRow> {
        match &self.mode {
            TscMode::Stance(target) => stance_outputs(model, state, eom, target),
            TscMode::Flight(target) => flight_outputs(model, state, target),
        }
    }

    /// Builds this tick's QP.
    pub fn problem(
        &self,
        model: &PlanarRobotModel,
        state: &RobotState,
    ) -> Result<(TscProblem, Vec<OutputRow>)> {
        let eom = Eom::new(model, &state.q, &state.qd);
        let contact = state
            .domain
            .is_stance()
            .then(|| ContactSet::from_kinematics(&eom.kin));
        let (grf, accel) = maps_from(&eom, &model.actuation(), contact.as_ref())?;
        let rows = self.outputs(model, state, &eom);
        let (a, b) = output_affine(&rows, &accel);
        let (lb, ub) = torque_limits(model, &state.qd);
        let prob = TscProblem {
            a,
            b,
            ydes: desired_output_accel(&rows, &self.gains),
            weights: output_weights(&rows, &self.gains),
            grf: grf.map(|map| GrfConstraint {
                polytope: grf_polytope(model),
                map,
            }),
            lb,
            ub,
            regularization: self.gains.regularization,
        };
        Ok((prob, rows))
    }

    /// CSV `t,domain,Y1,Y2...,u...,Fz,Fx,qp_status,qp_iters`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from(
            "t,domain,Y1,Y2a,Y2b,Y2c,u_fw,u_hip,u_leg,u_toe,Fz,Fx,qp_status,qp_iters\n",
        );
        for r in &self.log {
            let _ = write!(out, "{:.6},{}", r.t, r.domain.name());
            for i in 0..4 {
                let _ = write!(out, ",{:.9}", r.outputs.get(i).copied().unwrap_or(0.0));
            }
            for v in r.u {
                let _ = write!(out, ",{v:.9}");
            }
            let _ = writeln!(
                out,
                ",{:.9},{:.9},{},{}",
                r.fz,
                r.fx,
                r.status.name(),
                r.iterations
            );
        }
        out
    }

    pub fn mean_qp_seconds(&self) -> f64 {
        if self.log.is_empty() {
            return 0.0;
        }
        self.log.iter().map(|r| r.seconds).sum::<f64>() / self.log.len() as f64
    }
}

impl Controller for TscController {
    fn control(&mut self, model: &PlanarRobotModel, state: &RobotState) -> VecU {
        let Ok((prob, rows)) = self.problem(model, state) else {
            return VecU::from_element(f64::NAN);
        };
        let sol = solve_tsc_qp(&prob, &self.warm);
        self.warm = sol.active.clone();
        let f = prob
            .grf
            .as_ref()
            .map(|g| g.map.a * sol.u + g.map.b)
            .unwrap_or_default();
        let box_violation = (0..4)
            .map(|i| (sol.u[i] - prob.ub[i]).max(prob.lb[i] - sol.u[i]).max(0.0))
            .fold(0.0, f64::max);
        self.log.push(TickLog {
            t: state.time,
            domain: state.domain,
            outputs: rows.iter().map(|r| r.value).collect(),
            u: sol.u.into(),
            fz: f[1],
            fx: f[0],
            status: sol.status,
            iterations: sol.iterations,
            seconds: sol.seconds,
            kkt_residual: sol.kkt_residual,
            box_violation,
        });
        sol.u
    }
}

/// Momentum, leg length, COM abscissa and pelvis pitch against the template
/// reference.
pub(crate) fn stance_outputs(
    model: &PlanarRobotModel,
    state: &RobotState,
    eom: &Eom,
    target: &StanceTarget,
) -> Vec<OutputRow> {
    let (q, qd) = (&state.q, &state.qd);
    let r = target.reference.sample(state.time - target.start);
    let (ag, ag_drift) = from_kinematics_map(model, &eom.kin);
    let h = (ag * nalgebra::SVector::<f64, NQ>::from_column_slice(qd))[0];
    let leg = differentiate::<5, _>(q, qd, |qj| crate::robot::leg_task(model, qj));
    vec![
        OutputRow {
            name: "H_pitch",
            order: OutputOrder::Momentum,
            value: h - r.momentum,
            rate: 0.0,
            jac: ag,
            drift: ag_drift - r.momentum_rate,
        },
        OutputRow {
            name: "L",
            order: OutputOrder::Position,
            value: leg.value[4] - r.leg_length,
            rate: leg.rate[4] - r.leg_rate,
            jac: leg.jac.row(4).into_owned(),
            drift: leg.jdot_qd[4] - r.leg_accel,
        },
        OutputRow {
            name: "x_com",
            order: OutputOrder::Position,
            value: leg.value[0] - r.com_x,
            rate: leg.rate[0] - r.com_xdot,
            jac: leg.jac.row(0).into_owned(),
            drift: leg.jdot_qd[0] - r.com_xddot,
        },
        OutputRow {
            name: "pitch",
            order: OutputOrder::Position,
            value: q[PITCH] - r.pitch - target.pitch_offset,
            rate: qd[PITCH] - r.pitch_rate,
            jac: unit(PITCH),
            drift: -r.pitch_accel,
        },
    ]
}

/// d/dt of the summed lower-body inertia about the COM.
fn lower_inertia_rate(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> f64 {
    let kin = Kinematics::new(model, q, qd);
    let (c, v) = (kin.com(model), kin.com_velocity(model));
    model
        .links()
        .iter()
        .enumerate()
        .map(|(b, link)| {
            let (p, w) = (kin.bodies[b], kin.velocities[b]);
            2.0 * link.mass * ((p[0] - c[0]) * (w[0] - v[0]) + (p[1] - c[1]) * (w[1] - v[1]))
        })
        .sum()
}

/// Flywheel momentum against the transmission target, then tuck and either
/// the held joints (before `T₁`) or the touch-down leg and foot angles.
pub(crate) fn flight_outputs(
    model: &PlanarRobotModel,
    state: &RobotState,
    target: &FlightTarget,
) -> Vec<OutputRow> {
    let (q, qd) = (&state.q, &state.qd);
    let plan = &target.plan;
    let tau = state.time - target.start;
    let cm = centroidal_momentum(model, q, qd);
    let (inertia, inertia_rate) = if plan.reevaluate_inertia {
        (cm.lower_body_inertia(), lower_inertia_rate(model, q, qd))
    } else {
        (plan.lower_inertia, 0.0)
    };
    let rate = closed_loop_rate(tau, q[PITCH], plan);
    let rate_dot = closed_loop_rate_derivative(tau, qd[PITCH], plan);
    let h_des = cm.h_pitch - rate * inertia;
    let i_fw = cm.flywheel_inertia;
    let leg = differentiate::<5, _>(q, qd, |qj| crate::robot::leg_task(model, qj));
    let (l_des, l_rate, l_accel) = plan.leg_length(tau);
    let mut rows = vec![
        OutputRow {
            name: "H_flywheel",
            order: OutputOrder::Momentum,
            value: cm.flywheel_momentum() - h_des,
            rate: 0.0,
            jac: (unit(PITCH) + unit(FLYWHEEL)) * i_fw,
            drift: inertia * rate_dot + rate * inertia_rate,
        },
        OutputRow {
            name: "L",
            order: OutputOrder::Position,
            value: leg.value[4] - l_des,
            rate: leg.rate[4] - l_rate,
            jac: leg.jac.row(4).into_owned(),
            drift: leg.jdot_qd[4] - l_accel,
        },
    ];
    if tau < plan.t1 {
        rows.push(OutputRow {
            name: "hip",
            order: OutputOrder::Position,
            value: q[HIP] - target.hip_hold,
            rate: qd[HIP],
            jac: unit(HIP),
            drift: 0.0,
        });
        rows.push(OutputRow {
            name: "toe",
            order: OutputOrder::Position,
            value: q[TOE] - target.toe_hold,
            rate: qd[TOE],
            jac: unit(TOE),
            drift: 0.0,
        });
    } else {
        let beta = unwrap_near(leg.value[3], q[PITCH] + q[HIP]);
        rows.push(OutputRow {
            name: "leg_angle",
            order: OutputOrder::Position,
            value: beta - target.leg_angle_target,
            rate: leg.rate[3],
            jac: leg.jac.row(3).into_owned(),
            drift: leg.jdot_qd[3],
        });
        rows.push(OutputRow {
            name: "foot_pitch",
            order: OutputOrder::Position,
            value: q[PITCH] + q[HIP] + q[TOE] - target.foot_pitch_target,
            rate: qd[PITCH] + qd[HIP] + qd[TOE],
            jac: unit(PITCH) + unit(HIP) + unit(TOE),
            drift: 0.0,
        });
    }
    rows
}
