use super::{FslipControl, FslipError, FslipParams, FslipState, Result, MIN_LEG_LENGTH};
use crate::jet::Real;

/// `F^s = K(L)·s + D(L)·ṡ`.
pub fn spring_force(params: &FslipParams, l: f64, s: f64, sdot: f64) -> Result<f64> {
    Ok(params.stiffness(l)? * s + params.damping(l)? * sdot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub r: f64,
    pub beta: f64,
    pub rdot: f64,
    pub betadot: f64,
}

impl LegGeometry {
    pub fn deflection(&self, state: &FslipState) -> f64 {
        state.leg_length - self.r
    }

    pub fn deflection_rate(&self, state: &FslipState) -> f64 {
        state.leg_rate - self.rdot
    }
}

/// Geometry of the virtual leg from the foot anchor `(x_f, 0)` to the mass.
pub fn leg_geometry(state: &FslipState) -> Result<LegGeometry> {
    let dx = state.x - state.foot_x;
    let dz = state.z;
    let r = dx.hypot(dz);
    if !(r >= MIN_LEG_LENGTH) {
        return Err(FslipError::DegenerateGeometry(r));
    }
    if dz <= 0.0 {
        return Err(FslipError::MassBelowFoot(dz));
    }
    Ok(LegGeometry {
        r,
        beta: dx.atan2(dz),
        rdot: (dx * state.xdot + dz * state.zdot) / r,
        betadot: (dz * state.xdot - dx * state.zdot) / (r * r),
    })
}

/// Flywheel acceleration in momentum form, `d(I(L)θ̇)/dt = τ`.
fn flywheel_accel(params: &FslipParams, state: &FslipState, tau: f64) -> f64 {
    let l = state.leg_length;
    (tau - params.inertia_slope_unchecked(l) * state.leg_rate * state.thetadot)
        / params.inertia_unchecked(l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundReaction {
    pub fx: f64,
    pub fz: f64,
    pub spring_force: f64,
    /// Ankle moment `u` transmitted to the ground.
    pub foot_moment: f64,
}

/// Ground reaction of the massless leg, equal to the net non-gravitational
/// force on the mass.
pub fn ground_reaction(
    state: &FslipState,
    ctrl: &FslipControl,
    params: &FslipParams,
) -> Result<GroundReaction> {
    params.check_leg_length(state.leg_length)?;
    let g = leg_geometry(state)?;
    let fs = spring_force(
        params,
        state.leg_length,
        g.deflection(state),
        g.deflection_rate(state),
    )?;
    let tangential = (ctrl.flywheel_torque + ctrl.foot_moment) / g.r;
    let (sb, cb) = g.beta.sin_cos();
    Ok(GroundReaction {
        fx: -tangential * cb + fs * sb,
        fz: tangential * sb + fs * cb,
        spring_force: fs,
        foot_moment: ctrl.foot_moment,
    })
}

/// Time derivative of `(x, z, θ, L, ẋ, ż, θ̇, L̇)` with the foot pinned.
pub fn stance_dynamics(
    state: &FslipState,
    ctrl: &FslipControl,
    params: &FslipParams,
) -> Result<[f64; 8]> {
    let grf = ground_reaction(state, ctrl, params)?;
    let m = params.mass;
    Ok([
        state.xdot,
        state.zdot,
        state.thetadot,
        state.leg_rate,
        grf.fx / m,
        grf.fz / m - params.gravity,
        flywheel_accel(params, state, ctrl.flywheel_torque),
        ctrl.leg_accel,
    ])
}

/// Ballistic mass, spring at rest, flywheel driven by `τ`.
pub fn flight_dynamics(
    state: &FslipState,
    ctrl: &FslipControl,
    params: &FslipParams,
) -> Result<[f64; 8]> {
    params.check_leg_length(state.leg_length)?;
    Ok([
        state.xdot,
        state.zdot,
        state.thetadot,
        state.leg_rate,
        0.0,
        -params.gravity,
        flywheel_accel(params, state, ctrl.flywheel_torque),
        ctrl.leg_accel,
    ])
}

/// Everything the transcription needs at one node, generic so that the same
/// expressions yield values, Jacobians and Hessians.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StanceTerms<T> {
    pub rates: [T; 8],
    pub fx: T,
    pub fz: T,
    pub spring_force: T,
    pub sdot: T,
    pub beta: T,
}

/// `v = (x, z, θ, L, ẋ, ż, θ̇, L̇, L̈, u, τ)`.
pub(crate) fn stance_terms<T: Real>(p: &FslipParams, v: &[T], foot_x: f64) -> StanceTerms<T> {
    let (x, z, l) = (v[0], v[1], v[3]);
    let (xd, zd, thd, ld) = (v[4], v[5], v[6], v[7]);
    let (ldd, u, tau) = (v[8], v[9], v[10]);
    let dx = x - foot_x;
    let r = (dx * dx + z * z).sqrt();
    let rdot = (dx * xd + z * zd) / r;
    let s = l - r;
    let sdot = ld - rdot;
    let fs = p.stiffness_unchecked(l) * s + p.damping_unchecked(l) * sdot;
    let tangential = (tau + u) / r;
    let (sb, cb) = (dx / r, z / r);
    let fx = fs * sb - tangential * cb;
    let fz = fs * cb + tangential * sb;
    let thdd = (tau - p.inertia_slope_unchecked(l) * ld * thd) / p.inertia_unchecked(l);
    StanceTerms {
        rates: [
            xd,
            zd,
            thd,
            ld,
            fx / p.mass,
            fz / p.mass - p.gravity,
            thdd,
            ldd,
        ],
        fx,
        fz,
        spring_force: fs,
        sdot,
        beta: dx.atan2(z),
    }
}
