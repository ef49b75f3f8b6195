//! Euler–Lagrange terms, flat-foot contact and the plastic impact map.
//!
//! `M(q) q̈ + H(q, q̇) = B u + J_sᵀ τ_s + J_hᵀ F` with `F = (F_x, F_z, m_y)` the
//! ground force and moment on the foot.

use nalgebra::{Cholesky, DMatrix, DVector, SMatrix, SVector, Vector3, U3};

use super::kinematics::{Body, Kinematics};
use super::{
    Domain, Mat3Q, Mat3U, MatQ, MatQU, PlanarRobotModel, Result, RobotError, RobotState, VecQ,
    VecU, NQ, SPRING,
};

/// Contact rows below this pivot ratio are treated as dependent.
const RANK_TOL: f64 = 1e-12;

pub(crate) struct Eom {
    pub m: MatQ,
    /// Bias net of the spring, `H − J_sᵀ τ_s`.
    pub h_bar: VecQ,
    pub kin: Kinematics,
}

impl Eom {
    pub fn new(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> Self {
        let kin = Kinematics::new(model, q, qd);
        let g = model.gravity;
        let mut m = MatQ::zeros();
        let mut h = VecQ::zeros();
        for (b, link) in model.links().iter().enumerate() {
            let j = &kin.jacobians[b];
            let a = kin.jdot_qd[b];
            let (jx, jz, ja) = (
                j.row(0).transpose(),
                j.row(1).transpose(),
                j.row(2).transpose(),
            );
            m += (jx * jx.transpose() + jz * jz.transpose()) * link.mass
                + ja * ja.transpose() * link.inertia;
            h += jx * (link.mass * a[0])
                + jz * (link.mass * (a[1] + g))
                + ja * (link.inertia * a[2]);
        }
        // Jets accumulate in a fixed order, but make symmetry exact.
        let m = (m + m.transpose()) * 0.5;
        h[SPRING] -= spring_torque(model, q, qd);
        Eom { m, h_bar: h, kin }
    }

    pub fn chol(&self) -> Result<Cholesky<f64, nalgebra::Const<NQ>>> {
        Cholesky::new(self.m).ok_or(RobotError::SingularMass)
    }
}

pub fn mass_matrix(model: &PlanarRobotModel, q: &[f64]) -> MatQ {
    Eom::new(model, q, &[0.0; NQ]).m
}

/// Coriolis, centrifugal and gravity terms.
pub fn bias(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> VecQ {
    let mut h = Eom::new(model, q, qd).h_bar;
    h[SPRING] += spring_torque(model, q, qd);
    h
}

/// Generalized spring force on `s_spring`, `τ_s = −k_s s − d_s ṡ`.
pub fn spring_torque(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> f64 {
    -model.spring_stiffness * q[SPRING] - model.spring_damping * qd[SPRING]
}

pub fn kinetic_energy(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> f64 {
    let v = VecQ::from_column_slice(qd);
    0.5 * v.dot(&(mass_matrix(model, q) * v))
}

/// Flat-foot holonomic rows: foot x, foot z, foot pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub jac: Mat3Q,
    pub jdot_qd: Vector3<f64>,
    /// Foot pose `(x, z, pitch)`.
    pub pose: Vector3<f64>,
}

impl ContactSet {
    pub(crate) fn from_kinematics(kin: &Kinematics) -> Self {
        let f = Body::Foot as usize;
        ContactSet {
            jac: kin.jacobians[f],
            jdot_qd: Vector3::from(kin.jdot_qd[f]),
            pose: Vector3::from(kin.bodies[f]),
        }
    }
}

pub fn contact_set(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> ContactSet {
    ContactSet::from_kinematics(&Kinematics::new(model, q, qd))
}

/// `(J M⁻¹ Jᵀ)` factored, with a full-rank check.
fn contact_inertia(
    chol: &Cholesky<f64, nalgebra::Const<NQ>>,
    jac: &Mat3Q,
) -> Result<(SMatrix<f64, NQ, 3>, Cholesky<f64, U3>)> {
    let minv_jt = chol.solve(&jac.transpose());
    let lambda = jac * minv_jt;
    let lambda = (lambda + lambda.transpose()) * 0.5;
    let scale = lambda.diagonal().max();
    let fact = Cholesky::new(lambda).ok_or(RobotError::RankDeficientContact(0.0))?;
    let pivot = fact
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if !(pivot > RANK_TOL * scale) {
        return Err(RobotError::RankDeficientContact(pivot / scale));
    }
    Ok((minv_jt, fact))
}

/// Solves the equations of motion together with `J q̈ + J̇ q̇ = 0` as one
/// saddle-point system. Returns `(q̈, F)`.
pub fn constrained_dynamics(
    model: &PlanarRobotModel,
    q: &[f64],
    qd: &[f64],
    u: &VecU,
    contact: &ContactSet,
) -> Result<(VecQ, Vector3<f64>)> {
    let eom = Eom::new(model, q, qd);
    constrained_from(&eom, &model.actuation(), u, contact)
}

pub(crate) fn constrained_from(
    eom: &Eom,
    b: &MatQU,
    u: &VecU,
    contact: &ContactSet,
) -> Result<(VecQ, Vector3<f64>)> {
    contact_inertia(&eom.chol()?, &contact.jac)?;
    let mut kkt = SMatrix::<f64, 11, 11>::zeros();
    kkt.fixed_view_mut::<NQ, NQ>(0, 0).copy_from(&eom.m);
    kkt.fixed_view_mut::<NQ, 3>(0, NQ)
        .copy_from(&(-contact.jac.transpose()));
    kkt.fixed_view_mut::<3, NQ>(NQ, 0).copy_from(&contact.jac);
    let mut rhs = SVector::<f64, 11>::zeros();
    rhs.fixed_rows_mut::<NQ>(0).copy_from(&(b * u - eom.h_bar));
    rhs.fixed_rows_mut::<3>(NQ).copy_from(&(-contact.jdot_qd));
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(RobotError::RankDeficientContact(0.0))?;
    Ok((
        sol.fixed_rows::<NQ>(0).into_owned(),
        sol.fixed_rows::<3>(NQ).into_owned(),
    ))
}

pub(crate) fn free_from(eom: &Eom, b: &MatQU, u: &VecU) -> Result<VecQ> {
    Ok(eom.chol()?.solve(&(b * u - eom.h_bar)))
}

/// Ground force as an affine function of the input, `F = A_v u + b_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfMap {
    pub a: Mat3U,
    pub b: Vector3<f64>,
}

/// Accelerations as an affine function of the input, `q̈ = Ā u + b̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelMap {
    pub a: MatQU,
    pub b: VecQ,
}

pub(crate) fn maps_from(
    eom: &Eom,
    b: &MatQU,
    contact: Option<&ContactSet>,
) -> Result<(Option<GrfMap>, AccelMap)> {
    let chol = eom.chol()?;
    let minv_b = chol.solve(b);
    let minv_h = chol.solve(&eom.h_bar);
    let Some(c) = contact else {
        return Ok((
            None,
            AccelMap {
                a: minv_b,
                b: -minv_h,
            },
        ));
    };
    let (minv_jt, lam) = contact_inertia(&chol, &c.jac)?;
    let grf = GrfMap {
        a: -lam.solve(&(c.jac * minv_b)),
        b: lam.solve(&(c.jac * minv_h - c.jdot_qd)),
    };
    let accel = AccelMap {
        a: minv_b + minv_jt * grf.a,
        b: minv_jt * grf.b - minv_h,
    };
    Ok((Some(grf), accel))
}

pub fn grf_affine_map(
    model: &PlanarRobotModel,
    q: &[f64],
    qd: &[f64],
    contact: &ContactSet,
) -> Result<GrfMap> {
    let eom = Eom::new(model, q, qd);
    Ok(maps_from(&eom, &model.actuation(), Some(contact))?
        .0
        .expect("contact given"))
}

/// With `contact = None` this is the unconstrained flight map.
pub fn accel_affine_map(
    model: &PlanarRobotModel,
    q: &[f64],
    qd: &[f64],
    contact: Option<&ContactSet>,
) -> Result<AccelMap> {
    let eom = Eom::new(model, q, qd);
    Ok(maps_from(&eom, &model.actuation(), contact)?.1)
}

/// Plastic impact on a constraint with Jacobian `jac` under inertia `mass`:
/// `q̇⁺ = q̇⁻ − M⁻¹Jᵀ(JM⁻¹Jᵀ)⁻¹J q̇⁻`.
pub fn impact_velocity(
    mass: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    qd: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = mass.clone().cholesky().ok_or(RobotError::SingularMass)?;
    let minv_jt = chol.solve(&jac.transpose());
    let lambda = jac * &minv_jt;
    let scale = lambda.diagonal().max();
    let fact = lambda
        .cholesky()
        .ok_or(RobotError::RankDeficientContact(0.0))?;
    let pivot = fact
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if !(pivot > RANK_TOL * scale) {
        return Err(RobotError::RankDeficientContact(pivot / scale));
    }
    Ok(qd - minv_jt * fact.solve(&(jac * qd)))
}

/// Applies the plastic impact of the foot and anchors it, entering landing.
pub fn impact_map(model: &PlanarRobotModel, pre: &RobotState) -> Result<RobotState> {
    let eom = Eom::new(model, &pre.q, &pre.qd);
    let c = ContactSet::from_kinematics(&eom.kin);
    let post = impact_velocity(
        &DMatrix::from_column_slice(NQ, NQ, eom.m.as_slice()),
        &DMatrix::from_column_slice(3, NQ, c.jac.as_slice()),
        &DVector::from_column_slice(&pre.qd),
    )?;
    let mut out = pre.clone();
    out.qd.copy_from_slice(post.as_slice());
    Ok(out.anchored(model, Domain::Landing))
}

/// Pulls a stance state back onto its anchor: positions by a few
/// inertia-weighted Newton steps, velocities by projection.
pub(crate) fn project_to_anchor(model: &PlanarRobotModel, state: &mut RobotState) -> Result<()> {
    let Some(anchor) = state.anchor else {
        return Ok(());
    };
    let target = Vector3::new(anchor.x, anchor.z, anchor.pitch);
    for _ in 0..2 {
        let eom = Eom::new(model, &state.q, &[0.0; NQ]);
        let c = ContactSet::from_kinematics(&eom.kin);
        let err = c.pose - target;
        if err.amax() < 1e-15 {
            break;
        }
        let chol = eom.chol()?;
        let (minv_jt, lam) = contact_inertia(&chol, &c.jac)?;
        let dq = minv_jt * lam.solve(&err);
        for i in 0..NQ {
            state.q[i] -= dq[i];
        }
    }
    let eom = Eom::new(model, &state.q, &[0.0; NQ]);
    let c = ContactSet::from_kinematics(&eom.kin);
    let (minv_jt, lam) = contact_inertia(&eom.chol()?, &c.jac)?;
    let v = VecQ::from_column_slice(&state.qd);
    let v = v - minv_jt * lam.solve(&(c.jac * v));
    state.qd.copy_from_slice(v.as_slice());
    Ok(())
}
