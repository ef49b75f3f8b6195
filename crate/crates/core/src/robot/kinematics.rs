//! Body poses, written once over [`Real`] and differentiated with jets.

use nalgebra::SMatrix;

use super::{PlanarRobotModel, FLYWHEEL, HIP, MOTOR, NQ, PITCH, SPRING, TOE, X, Z};
use crate::jet::{Jet, Real};

pub const BODY_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Body {
    Pelvis = 0,
    Flywheel = 1,
    Thigh = 2,
    Shin = 3,
    Foot = 4,
}

/// `(x, z, pitch)` of every body COM, in [`Body`] order.
pub(crate) fn body_poses<T: Real>(m: &PlanarRobotModel, q: &[T]) -> [[T; 3]; BODY_COUNT] {
    let (x, z, phi) = (q[X], q[Z], q[PITCH]);
    let (sp, cp) = (phi.sin(), phi.cos());
    let up = |h: f64| [x + sp * h, z + cp * h];
    let [px, pz] = up(m.pelvis_com);
    let [fx, fz] = up(m.flywheel_mount);

    let a = phi + q[HIP];
    let (sa, ca) = (a.sin(), a.cos());
    let lm = q[MOTOR];
    let shin = lm - m.shin_com;
    let reach = lm - lm * q[SPRING] / m.spring_ref_length;
    [
        [px, pz, phi],
        [fx, fz, phi + q[FLYWHEEL]],
        [x - sa * m.thigh_com, z - ca * m.thigh_com, a],
        [x - sa * shin, z - ca * shin, a],
        [x - sa * reach, z - ca * reach, a + q[TOE]],
    ]
}

pub(crate) fn com_of<T: Real>(m: &PlanarRobotModel, poses: &[[T; 3]; BODY_COUNT]) -> [T; 2] {
    let mut cx = T::zero();
    let mut cz = T::zero();
    for (p, link) in poses.iter().zip(m.links()) {
        cx += p[0] * link.mass;
        cz += p[1] * link.mass;
    }
    let total = m.total_mass();
    [cx / total, cz / total]
}

pub fn poses(m: &PlanarRobotModel, q: &[f64]) -> [[f64; 3]; BODY_COUNT] {
    body_poses(m, q)
}

/// Value, Jacobian and velocity-product term `J̇ q̇` of a task map.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMap<const N: usize> {
    pub value: [f64; N],
    pub rate: [f64; N],
    pub jac: SMatrix<f64, N, NQ>,
    pub jdot_qd: [f64; N],
}

/// Differentiates `f` at `q` with one jet pass per coordinate plus one along `q̇`.
pub fn differentiate<const N: usize, F>(q: &[f64], qd: &[f64], f: F) -> TaskMap<N>
where
    F: Fn(&[Jet]) -> [Jet; N],
{
    let mut jac = SMatrix::<f64, N, NQ>::zeros();
    let mut seeded = [Jet::default(); NQ];
    for j in 0..NQ {
        for i in 0..NQ {
            seeded[i] = Jet::var(q[i], if i == j { 1.0 } else { 0.0 });
        }
        let out = f(&seeded);
        for r in 0..N {
            jac[(r, j)] = out[r].d;
        }
    }
    for i in 0..NQ {
        seeded[i] = Jet::var(q[i], qd[i]);
    }
    let out = f(&seeded);
    TaskMap {
        value: out.map(|o| o.v),
        rate: out.map(|o| o.d),
        jac,
        jdot_qd: out.map(|o| o.dd),
    }
}

/// Poses, Jacobians and `J̇ q̇` of all bodies at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub bodies: [[f64; 3]; BODY_COUNT],
    pub velocities: [[f64; 3]; BODY_COUNT],
    pub jacobians: [SMatrix<f64, 3, NQ>; BODY_COUNT],
    pub jdot_qd: [[f64; 3]; BODY_COUNT],
}

impl Kinematics {
    pub fn new(m: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> Self {
        let map = differentiate::<15, _>(q, qd, |qj| {
            let p = body_poses(m, qj);
            std::array::from_fn(|k| p[k / 3][k % 3])
        });
        let mut out = Kinematics {
            bodies: [[0.0; 3]; BODY_COUNT],
            velocities: [[0.0; 3]; BODY_COUNT],
            jacobians: [SMatrix::zeros(); BODY_COUNT],
            jdot_qd: [[0.0; 3]; BODY_COUNT],
        };
        for b in 0..BODY_COUNT {
            for r in 0..3 {
                let k = 3 * b + r;
                out.bodies[b][r] = map.value[k];
                out.velocities[b][r] = map.rate[k];
                out.jdot_qd[b][r] = map.jdot_qd[k];
                out.jacobians[b].set_row(r, &map.jac.row(k));
            }
        }
        out
    }

    pub fn com(&self, m: &PlanarRobotModel) -> [f64; 2] {
        com_of(m, &self.bodies)
    }

    pub fn com_velocity(&self, m: &PlanarRobotModel) -> [f64; 2] {
        com_of(m, &self.velocities)
    }

    pub fn foot(&self) -> [f64; 3] {
        self.bodies[Body::Foot as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_q() -> [f64; NQ] {
        [0.1, 0.9, 0.3, 1.2, -0.4, 0.75, 0.02, 0.25]
    }

    #[test]
    fn upright_leg_hangs_below_hip() {
        let m = PlanarRobotModel::default();
        let mut q = [0.0; NQ];
        q[Z] = 1.0;
        q[MOTOR] = 0.8;
        let p = poses(&m, &q);
        let foot = p[Body::Foot as usize];
        assert!(foot[0].abs() < 1e-15);
        assert!((foot[1] - 0.2).abs() < 1e-15);
        assert!((p[Body::Flywheel as usize][1] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn positive_pitch_tips_the_top_forward() {
        let m = PlanarRobotModel::default();
        let mut q = sample_q();
        q[PITCH] = 0.2;
        let fw = poses(&m, &q)[Body::Flywheel as usize];
        assert!(fw[0] > q[X]);
    }

    #[test]
    fn spring_compression_shortens_the_leg_by_the_lever() {
        let m = PlanarRobotModel::default();
        let mut q = [0.0; NQ];
        q[MOTOR] = 0.6;
        let z0 = poses(&m, &q)[Body::Foot as usize][1];
        q[SPRING] = 0.01;
        let z1 = poses(&m, &q)[Body::Foot as usize][1];
        assert!((z1 - z0 - 0.01 * 0.6 / 0.8).abs() < 1e-15);
    }

    #[test]
    fn jacobian_and_velocity_product_match_differences() {
        let m = PlanarRobotModel::default();
        let q = sample_q();
        let qd = [0.4, -1.0, 2.0, 30.0, -3.0, 0.5, -0.2, 1.5];
        let k = Kinematics::new(&m, &q, &qd);
        let h = 1e-6;
        for j in 0..NQ {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            let (pp, pm) = (poses(&m, &qp), poses(&m, &qm));
            for b in 0..BODY_COUNT {
                for r in 0..3 {
                    let fd = (pp[b][r] - pm[b][r]) / (2.0 * h);
                    assert!((k.jacobians[b][(r, j)] - fd).abs() < 1e-8);
                }
            }
        }
        // J̇q̇ as the second difference along q̇.
        let h = 1e-4;
        let shift = |s: f64| -> [f64; NQ] { std::array::from_fn(|i| q[i] + s * qd[i]) };
        let (pp, p0, pm) = (poses(&m, &shift(h)), poses(&m, &q), poses(&m, &shift(-h)));
        for b in 0..BODY_COUNT {
            for r in 0..3 {
                let fd = (pp[b][r] - 2.0 * p0[b][r] + pm[b][r]) / (h * h);
                assert!(
                    (k.jdot_qd[b][r] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                    "{b} {r}"
                );
            }
        }
    }
}
