//! Centroidal pitch momentum and its per-link decomposition.

use nalgebra::RowSVector;
use serde::{Deserialize, Serialize};

use super::kinematics::{Body, Kinematics, BODY_COUNT};
use super::{PlanarRobotModel, NQ};

/// One lower-body entry: pitch inertia about the system COM and the rate
/// that reproduces the entry's momentum, `h_i = I_i ω_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMomentum {
    pub name: &'static str,
    pub inertia: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentroidalMomentum {
    pub h_pitch: f64,
    pub flywheel_inertia: f64,
    /// Absolute flywheel rate `φ̇ + θ̇_fw`.
    pub flywheel_rate: f64,
    /// Pelvis (carrying the flywheel mass), thigh, shin, foot.
    pub links: Vec<LinkMomentum>,
    pub com: [f64; 2],
    pub com_velocity: [f64; 2],
}

impl CentroidalMomentum {
    pub fn flywheel_momentum(&self) -> f64 {
        self.flywheel_inertia * self.flywheel_rate
    }

    pub fn lower_body_inertia(&self) -> f64 {
        self.links.iter().map(|l| l.inertia).sum()
    }

    /// Σ I_i ω_i.
    pub fn lower_body_momentum(&self) -> f64 {
        self.links.iter().map(|l| l.inertia * l.rate).sum()
    }
}

pub fn centroidal_momentum(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> CentroidalMomentum {
    from_kinematics(model, &Kinematics::new(model, q, qd))
}

pub(crate) fn from_kinematics(model: &PlanarRobotModel, kin: &Kinematics) -> CentroidalMomentum {
    let c = kin.com(model);
    let v = kin.com_velocity(model);
    let links = model.links();
    // Translational momentum of each body about the COM, and its parallel-axis inertia.
    let orbital = |b: usize| {
        let (dx, dz) = (kin.bodies[b][0] - c[0], kin.bodies[b][1] - c[1]);
        let (dvx, dvz) = (kin.velocities[b][0] - v[0], kin.velocities[b][1] - v[1]);
        let m = links[b].mass;
        (m * (dz * dvx - dx * dvz), m * (dx * dx + dz * dz))
    };

    let fw = Body::Flywheel as usize;
    let mut entries = Vec::with_capacity(BODY_COUNT - 1);
    let mut h_total = 0.0;
    for (b, name) in [(0, "pelvis"), (2, "thigh"), (3, "shin"), (4, "foot")] {
        let (mut h, mut inertia) = orbital(b);
        h += links[b].inertia * kin.velocities[b][2];
        inertia += links[b].inertia;
        if b == Body::Pelvis as usize {
            let (hf, if_) = orbital(fw);
            h += hf;
            inertia += if_;
        }
        h_total += h;
        entries.push(LinkMomentum {
            name,
            inertia,
            rate: h / inertia,
        });
    }
    let flywheel_rate = kin.velocities[fw][2];
    let flywheel_inertia = links[fw].inertia;
    CentroidalMomentum {
        h_pitch: h_total + flywheel_inertia * flywheel_rate,
        flywheel_inertia,
        flywheel_rate,
        links: entries,
        com: c,
        com_velocity: v,
    }
}

/// Row `A_G` with `H_pitch = A_G q̇`, and the drift `Ȧ_G q̇`.
pub fn momentum_map(model: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> (RowSVector<f64, NQ>, f64) {
    from_kinematics_map(model, &Kinematics::new(model, q, qd))
}

/// The velocity-product terms of `Ḣ = Σ I_b α_b + m_b (Δz a_x − Δx a_z)`
/// cancel about the COM, leaving body accelerations only.
pub(crate) fn from_kinematics_map(
    model: &PlanarRobotModel,
    kin: &Kinematics,
) -> (RowSVector<f64, NQ>, f64) {
    let c = kin.com(model);
    let mut row = RowSVector::<f64, NQ>::zeros();
    let mut drift = 0.0;
    for (b, link) in model.links().iter().enumerate() {
        let j = &kin.jacobians[b];
        let (dx, dz) = (kin.bodies[b][0] - c[0], kin.bodies[b][1] - c[1]);
        row += j.row(2) * link.inertia + (j.row(0) * dz - j.row(1) * dx) * link.mass;
        let a = kin.jdot_qd[b];
        drift += link.inertia * a[2] + link.mass * (dz * a[0] - dx * a[1]);
    }
    (row, drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{X, Z};

    fn state() -> ([f64; NQ], [f64; NQ]) {
        (
            [0.1, 0.9, 0.3, 1.2, -0.4, 0.75, 0.02, 0.25],
            [0.4, -1.0, 2.0, 30.0, -3.0, 0.5, -0.2, 1.5],
        )
    }

    #[test]
    fn at_rest_no_momentum() {
        let m = PlanarRobotModel::default();
        let (q, _) = state();
        assert_eq!(centroidal_momentum(&m, &q, &[0.0; NQ]).h_pitch, 0.0);
    }

    #[test]
    fn base_translation_carries_no_pitch_momentum() {
        let m = PlanarRobotModel::default();
        let (q, _) = state();
        let mut qd = [0.0; NQ];
        qd[X] = 2.5;
        qd[Z] = -1.0;
        assert!(centroidal_momentum(&m, &q, &qd).h_pitch.abs() < 1e-13);
    }

    #[test]
    fn decomposition_sums_to_total() {
        let m = PlanarRobotModel::default();
        let (q, qd) = state();
        let cm = centroidal_momentum(&m, &q, &qd);
        let sum = cm.flywheel_momentum() + cm.lower_body_momentum();
        assert!((sum - cm.h_pitch).abs() < 1e-10);
    }

    #[test]
    fn momentum_row_is_linear_in_rates() {
        let m = PlanarRobotModel::default();
        let (q, qd) = state();
        let (row, _) = momentum_map(&m, &q, &qd);
        let h = centroidal_momentum(&m, &q, &qd).h_pitch;
        let lin: f64 = (0..NQ).map(|i| row[i] * qd[i]).sum();
        assert!((h - lin).abs() < 1e-10 * (1.0 + h.abs()));
    }
}
