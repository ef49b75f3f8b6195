//! The template view of the robot: virtual leg, state projection and the
//! leg-length regressions the template is built from.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dynamics::{ContactSet, Eom};
use super::kinematics::{body_poses, com_of, differentiate, Body};
use super::momentum;
use super::{Domain, PlanarRobotModel, Result, RobotError, RobotState, VecU, MOTOR, NQ, SPRING, Z};
use crate::fslip::{fit_regression, FslipParams, FslipState};
use crate::jet::Real;

/// `[com_x, com_z, r, β, L]` with `r` the COM-to-foot distance and
/// `L = r + κ s` the uncompressed virtual leg.
pub(crate) fn leg_task<T: Real>(m: &PlanarRobotModel, q: &[T]) -> [T; 5] {
    let poses = body_poses(m, q);
    let [cx, cz] = com_of(m, &poses);
    let foot = poses[Body::Foot as usize];
    let (dx, dz) = (cx - foot[0], cz - foot[1]);
    let r = (dx * dx + dz * dz).sqrt();
    let compression = q[MOTOR] * q[SPRING] / m.spring_ref_length;
    [cx, cz, r, dx.atan2(dz), r + compression]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualLeg {
    pub com: [f64; 2],
    pub com_velocity: [f64; 2],
    /// COM-to-foot distance r.
    pub length: f64,
    /// β, positive with the COM ahead of the foot.
    pub angle: f64,
    pub angle_rate: f64,
    /// L = r + κ s.
    pub actuated: f64,
    pub actuated_rate: f64,
    pub foot: [f64; 3],
}

pub fn virtual_leg(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> VirtualLeg {
    let t = differentiate::<5, _>(q, qd, |qj| leg_task(model, qj));
    VirtualLeg {
        com: [t.value[0], t.value[1]],
        com_velocity: [t.rate[0], t.rate[1]],
        length: t.value[2],
        angle: t.value[3],
        angle_rate: t.rate[3],
        actuated: t.value[4],
        actuated_rate: t.rate[4],
        foot: body_poses(model, q)[Body::Foot as usize],
    }
}

/// Maps a robot state onto the template. Heights are taken relative to the
/// foot's ground level and the template pitch rate carries the robot's
/// centroidal momentum, `I(L) θ̇ = H_pitch`.
pub fn fslip_projection(
    model: &PlanarRobotModel,
    params: &FslipParams,
    state: &RobotState,
) -> FslipState {
    let leg = virtual_leg(model, &state.q, &state.qd);
    let (foot_x, ground) = match state.anchor {
        Some(a) => (a.x, a.z),
        None => (leg.foot[0], leg.foot[1]),
    };
    let [lo, hi] = params.leg_length_bounds;
    let inertia = params.inertia_unchecked(leg.actuated.clamp(lo, hi));
    let h = momentum::centroidal_momentum(model, &state.q, &state.qd).h_pitch;
    FslipState {
        x: leg.com[0],
        z: leg.com[1] - ground,
        theta: state.q[super::PITCH],
        leg_length: leg.actuated,
        xdot: leg.com_velocity[0],
        zdot: leg.com_velocity[1],
        thetadot: h / inertia,
        leg_rate: leg.actuated_rate,
        foot_x,
    }
}

/// Upright, zero-spring configuration at motor length `lm`.
fn upright(lm: f64) -> [f64; NQ] {
    let mut q = [0.0; NQ];
    q[MOTOR] = lm;
    q[Z] = lm;
    q
}

/// Locked-body pitch inertia about the COM.
fn composite_inertia(model: &PlanarRobotModel, q: &[f64]) -> f64 {
    let poses = body_poses(model, q);
    let c = com_of(model, &poses);
    poses
        .iter()
        .zip(model.links())
        .map(|(p, l)| l.inertia + l.mass * ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
        .sum()
}

/// Template parameters regressed over the motor stroke: `K(L) = k_s/κ²`,
/// `D(L) = d_s/κ²` and the locked centroidal inertia `I(L)`, each as a cubic
/// in the virtual leg length of the upright, unloaded robot.
pub fn fslip_params(model: &PlanarRobotModel, leg_accel_bound: f64) -> Result<FslipParams> {
    model.validate()?;
    let [lo, hi] = model.motor_length_bounds;
    let n = 41;
    let mut k = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut i = Vec::with_capacity(n);
    for j in 0..n {
        let lm = lo + (hi - lo) * j as f64 / (n - 1) as f64;
        let q = upright(lm);
        let l = leg_task(model, &q)[4];
        let kappa = model.lever(lm);
        k.push((l, model.spring_stiffness / (kappa * kappa)));
        d.push((l, model.spring_damping / (kappa * kappa)));
        i.push((l, composite_inertia(model, &q)));
    }
    let fit = |s: &[(f64, f64)]| {
        fit_regression(s, 3)
            .map(|f| f.coefficients)
            .map_err(|e| RobotError::InvalidModel(e.to_string()))
    };
    let params = FslipParams {
        mass: model.total_mass(),
        gravity: model.gravity,
        stiffness_poly: fit(&k)?,
        damping_poly: fit(&d)?,
        inertia_poly: fit(&i)?,
        foot_length: model.foot_length,
        friction_mu: model.friction_mu,
        leg_length_bounds: [k[0].0, k[n - 1].0],
        leg_accel_bound,
        foot_moment_bound: model.toe_limit.max_effort,
        flywheel_torque_bound: model.flywheel.max_torque,
    };
    params
        .validate()
        .map_err(|e| RobotError::InvalidModel(e.to_string()))?;
    Ok(params)
}

/// Upright static stance on ground level `ground` with virtual leg length
/// `leg_length`; the spring carries everything above the foot.
pub fn standing_state(
    model: &PlanarRobotModel,
    leg_length: f64,
    ground: f64,
) -> Result<RobotState> {
    let above_foot = (model.total_mass() - model.foot.mass) * model.gravity;
    let config = |lm: f64| {
        let mut q = upright(lm);
        let s = model.lever(lm) * above_foot / model.spring_stiffness;
        q[SPRING] = s;
        q[Z] = ground + lm * (1.0 - s / model.spring_ref_length);
        q
    };
    let virt = |lm: f64| leg_task(model, &config(lm))[4];
    let [lo, hi] = model.motor_length_bounds;
    let (mut a, mut b) = (lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo));
    if !(virt(a) <= leg_length && leg_length <= virt(b)) {
        return Err(RobotError::InvalidModel(format!(
            "standing leg length {leg_length} is outside the reachable range"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if virt(mid) < leg_length {
            a = mid;
        } else {
            b = mid;
        }
    }
    let state = RobotState {
        q: config(0.5 * (a + b)),
        qd: [0.0; NQ],
        domain: Domain::Jumping,
        time: 0.0,
        anchor: None,
    };
    Ok(state.anchored(model, Domain::Jumping))
}

/// Input holding a stance state at rest, by least squares on
/// `B u + Jᵀ F = H̄`.
pub fn standing_input(model: &PlanarRobotModel, state: &RobotState) -> VecU {
    let eom = Eom::new(model, &state.q, &state.qd);
    let c = ContactSet::from_kinematics(&eom.kin);
    let b = model.actuation();
    let a = DMatrix::from_fn(NQ, 7, |r, col| {
        if col < 4 {
            b[(r, col)]
        } else {
            c.jac[(col - 4, r)]
        }
    });
    let rhs = DVector::from_column_slice(eom.h_bar.as_slice());
    let sol = a
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("svd computed with u and v");
    VecU::from_fn(|i, _| sol[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fslip::{leg_geometry, spring_force};

    #[test]
    fn regression_tracks_the_lever_stiffness() {
        let m = PlanarRobotModel::default();
        let p = fslip_params(&m, 40.0).unwrap();
        assert_eq!(p.mass, m.total_mass());
        let [lo, hi] = p.leg_length_bounds;
        assert!(lo < 0.62 && hi > 0.98, "{lo} {hi}");
        let k_mid = p.stiffness((lo + hi) / 2.0).unwrap();
        assert!(k_mid > 10000.0 && k_mid < 30000.0);
        assert!(p.inertia(hi).unwrap() > p.inertia(lo).unwrap());
    }

    #[test]
    fn standing_projection_is_static_template_stance() {
        let m = PlanarRobotModel::default();
        let p = fslip_params(&m, 40.0).unwrap();
        let st = standing_state(&m, 0.8, 0.0).unwrap();
        let f = fslip_projection(&m, &p, &st);
        assert!(f.x.abs() < 1e-12 && f.foot_x.abs() < 1e-12);
        assert!((f.leg_length - 0.8).abs() < 1e-9);
        let geo = leg_geometry(&f).unwrap();
        assert!(geo.beta.abs() < 1e-12);
        let fs = spring_force(&p, f.leg_length, geo.deflection(&f), 0.0).unwrap();
        assert!((fs - p.weight()).abs() < 0.02 * p.weight(), "{fs}");
    }

    #[test]
    fn standing_input_balances_gravity() {
        let m = PlanarRobotModel::default();
        let st = standing_state(&m, 0.8, 0.2).unwrap();
        let u = standing_input(&m, &st);
        let c = super::super::contact_set(&m, &st.q, &st.qd);
        let (qdd, f) = super::super::constrained_dynamics(&m, &st.q, &st.qd, &u, &c).unwrap();
        assert!(qdd.amax() < 1e-8, "{qdd}");
        assert!((f[1] - m.weight()).abs() < 1e-8);
    }
}
