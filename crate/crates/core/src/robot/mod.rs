//! Planar articulated robot: a pelvis carrying a flywheel, one effective leg
//! with a hip, a length actuator, a passive serial spring and a flat foot.
//!
//! Generalized coordinates, in order:
//!
//! | index | name       | meaning                                         |
//! |-------|------------|-------------------------------------------------|
//! | 0     | `x_base`   | hip x (m)                                       |
//! | 1     | `z_base`   | hip z (m)                                       |
//! | 2     | `φ_pelvis` | pelvis pitch (rad)                              |
//! | 3     | `θ_fw`     | flywheel angle relative to the pelvis (rad)     |
//! | 4     | `q_hip`    | leg angle relative to the pelvis (rad)          |
//! | 5     | `L_motor`  | actuated leg length (m)                         |
//! | 6     | `s_spring` | spring compression at the joint (m)             |
//! | 7     | `q_toe`    | foot angle relative to the leg (rad)            |
//!
//! The hip-to-foot distance is `L_motor − κ·s_spring` with `κ = L_motor/L_ref`,
//! so the leg-level stiffness `k_s/κ²` falls with leg length.

mod dynamics;
mod kinematics;
mod momentum;
mod projection;
mod sim;

pub use dynamics::{
    accel_affine_map, bias, constrained_dynamics, contact_set, grf_affine_map, impact_map,
    impact_velocity, kinetic_energy, mass_matrix, spring_torque, AccelMap, ContactSet, GrfMap,
};
pub(crate) use dynamics::{maps_from, Eom};
pub use kinematics::{differentiate, poses, Body, Kinematics, TaskMap, BODY_COUNT};
pub(crate) use momentum::from_kinematics_map;
pub use momentum::{centroidal_momentum, momentum_map, CentroidalMomentum, LinkMomentum};
pub(crate) use projection::leg_task;
pub use projection::{
    fslip_params, fslip_projection, standing_input, standing_state, virtual_leg, VirtualLeg,
};
pub use sim::{
    simulate, Controller, SimEvent, SimEventKind, SimOptions, SimOutcome, SimResult,
    TrajectorySample,
};

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NQ: usize = 8;
pub const NU: usize = 4;

pub const X: usize = 0;
pub const Z: usize = 1;
pub const PITCH: usize = 2;
pub const FLYWHEEL: usize = 3;
pub const HIP: usize = 4;
pub const MOTOR: usize = 5;
pub const SPRING: usize = 6;
pub const TOE: usize = 7;

/// Actuated coordinates, in the order of the input vector `u`.
pub const ACTUATED: [usize; NU] = [FLYWHEEL, HIP, MOTOR, TOE];

pub type VecQ = SVector<f64, NQ>;
pub type VecU = SVector<f64, NU>;
pub type MatQ = SMatrix<f64, NQ, NQ>;
pub type MatQU = SMatrix<f64, NQ, NU>;
pub type Mat3Q = SMatrix<f64, 3, NQ>;
pub type Mat3U = SMatrix<f64, 3, NU>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("rank-deficient contact (min pivot {0:e})")]
    RankDeficientContact(f64),
    #[error("mass matrix is not positive definite")]
    SingularMass,
    #[error("state is not finite")]
    NonFinite,
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, RobotError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    /// Pitch inertia about the link COM (kg·m²).
    pub inertia: f64,
}

/// Flywheel variants available to the pelvis mount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlywheelSpec {
    pub name: String,
    pub inertia: f64,
    pub mass: f64,
    pub max_torque: f64,
    pub max_speed_rpm: f64,
}

impl FlywheelSpec {
    pub fn table() -> [FlywheelSpec; 3] {
        let spec = |name: &str, inertia, mass, rpm| FlywheelSpec {
            name: name.into(),
            inertia,
            mass,
            max_torque: 195.0,
            max_speed_rpm: rpm,
        };
        [
            spec("I", 0.1074, 9.54, 1645.0),
            spec("II", 0.2148, 19.09, 812.0),
            spec("III", 0.3222, 28.63, 573.0),
        ]
    }

    pub fn by_name(name: &str) -> Option<FlywheelSpec> {
        Self::table().into_iter().find(|s| s.name == name)
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed_rpm * 2.0 * PI / 60.0
    }
}

/// Linear torque-speed envelope of one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimit {
    /// Stall torque or force.
    pub max_effort: f64,
    /// Speed at which no effort remains.
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarRobotModel {
    pub gravity: f64,
    pub pelvis: Link,
    /// Pelvis COM height above the hip in the pelvis frame.
    pub pelvis_com: f64,
    pub flywheel: FlywheelSpec,
    /// Flywheel axle height above the hip in the pelvis frame.
    pub flywheel_mount: f64,
    pub thigh: Link,
    /// Thigh COM distance from the hip.
    pub thigh_com: f64,
    pub shin: Link,
    /// Shin COM distance back from the motor end of the leg.
    pub shin_com: f64,
    /// Foot link, COM at the sole center.
    pub foot: Link,
    pub foot_length: f64,
    pub friction_mu: f64,
    /// Joint-level spring stiffness k_s (N/m).
    pub spring_stiffness: f64,
    /// Joint-level spring damping d_s (N·s/m).
    pub spring_damping: f64,
    /// Leg length at which the spring lever factor is one.
    pub spring_ref_length: f64,
    pub motor_length_bounds: [f64; 2],
    /// Sampling ranges for hip angle, spring compression and toe angle.
    pub hip_bounds: [f64; 2],
    pub spring_bounds: [f64; 2],
    pub toe_bounds: [f64; 2],
    /// Hip, leg motor and toe envelopes; the flywheel's comes from its spec.
    pub hip_limit: ActuatorLimit,
    pub motor_limit: ActuatorLimit,
    pub toe_limit: ActuatorLimit,
}

impl Default for PlanarRobotModel {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            pelvis: Link {
                mass: 18.46,
                inertia: 0.5,
            },
            pelvis_com: 0.10,
            flywheel: FlywheelSpec::table()[0].clone(),
            flywheel_mount: 0.25,
            thigh: Link {
                mass: 3.0,
                inertia: 0.06,
            },
            thigh_com: 0.15,
            shin: Link {
                mass: 1.7,
                inertia: 0.03,
            },
            shin_com: 0.2,
            foot: Link {
                mass: 0.3,
                inertia: 0.004,
            },
            foot_length: 0.18,
            friction_mu: 0.6,
            spring_stiffness: 15000.0,
            spring_damping: 200.0,
            spring_ref_length: 0.8,
            motor_length_bounds: [0.5, 0.95],
            hip_bounds: [-1.5, 1.5],
            spring_bounds: [-0.05, 0.15],
            toe_bounds: [-1.2, 1.2],
            hip_limit: ActuatorLimit {
                max_effort: 300.0,
                max_speed: 30.0,
            },
            motor_limit: ActuatorLimit {
                max_effort: 6000.0,
                max_speed: 10.0,
            },
            toe_limit: ActuatorLimit {
                max_effort: 60.0,
                max_speed: 30.0,
            },
        }
    }
}

impl PlanarRobotModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RobotError::Io(format!("{}: {e}", path.display())))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| RobotError::Io(format!("{}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }

    pub fn with_flywheel(mut self, spec: FlywheelSpec) -> Self {
        self.flywheel = spec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RobotError::InvalidModel(m));
        for (name, link) in [
            ("pelvis", self.pelvis),
            ("thigh", self.thigh),
            ("shin", self.shin),
            ("foot", self.foot),
            (
                "flywheel",
                Link {
                    mass: self.flywheel.mass,
                    inertia: self.flywheel.inertia,
                },
            ),
        ] {
            if !(link.mass > 0.0 && link.inertia > 0.0) {
                return bad(format!("{name} mass and inertia must be positive"));
            }
        }
        if !(self.gravity > 0.0 && self.foot_length > 0.0 && self.friction_mu > 0.0) {
            return bad("gravity, foot length and friction must be positive".into());
        }
        if !(self.spring_stiffness > 0.0
            && self.spring_damping >= 0.0
            && self.spring_ref_length > 0.0)
        {
            return bad("spring parameters must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("motor length", self.motor_length_bounds),
            ("hip", self.hip_bounds),
            ("spring", self.spring_bounds),
            ("toe", self.toe_bounds),
        ] {
            if !(lo < hi) {
                return bad(format!("{name} bounds are not an interval"));
            }
        }
        if self.motor_length_bounds[0] <= self.shin_com {
            return bad("shortest leg must clear the shin COM".into());
        }
        let speed = self.flywheel.max_speed();
        for (name, lim) in [
            ("hip", self.hip_limit),
            ("motor", self.motor_limit),
            ("toe", self.toe_limit),
            (
                "flywheel",
                ActuatorLimit {
                    max_effort: self.flywheel.max_torque,
                    max_speed: speed,
                },
            ),
        ] {
            if !(lim.max_effort > 0.0 && lim.max_speed > 0.0) {
                return bad(format!("{name} actuator limits must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.links().iter().map(|l| l.mass).sum()
    }

    pub fn weight(&self) -> f64 {
        self.total_mass() * self.gravity
    }

    /// Links in body order: pelvis, flywheel, thigh, shin, foot.
    pub fn links(&self) -> [Link; kinematics::BODY_COUNT] {
        [
            self.pelvis,
            Link {
                mass: self.flywheel.mass,
                inertia: self.flywheel.inertia,
            },
            self.thigh,
            self.shin,
            self.foot,
        ]
    }

    /// Envelopes in input order (flywheel, hip, motor, toe).
    pub fn actuator_limits(&self) -> [ActuatorLimit; NU] {
        [
            ActuatorLimit {
                max_effort: self.flywheel.max_torque,
                max_speed: self.flywheel.max_speed(),
            },
            self.hip_limit,
            self.motor_limit,
            self.toe_limit,
        ]
    }

    /// Actuation map: input `i` drives coordinate `ACTUATED[i]`.
    pub fn actuation(&self) -> MatQU {
        let mut b = MatQU::zeros();
        for (i, &j) in ACTUATED.iter().enumerate() {
            b[(j, i)] = 1.0;
        }
        b
    }

    /// Spring lever factor κ.
    pub fn lever(&self, motor_length: f64) -> f64 {
        motor_length / self.spring_ref_length
    }

    /// Axial spring force along the leg (N), compression positive.
    pub fn leg_spring_force(&self, q: &[f64], qd: &[f64]) -> f64 {
        -spring_torque(self, q, qd) / self.lever(q[MOTOR])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Jumping,
    Flight,
    Landing,
}

impl Domain {
    pub fn is_stance(self) -> bool {
        !matches!(self, Domain::Flight)
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Jumping => "jumping",
            Domain::Flight => "flight",
            Domain::Landing => "landing",
        }
    }
}

/// Ground contact pose the foot is held at during stance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootAnchor {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub domain: Domain,
    pub time: f64,
    /// Present in stance.
    pub anchor: Option<FootAnchor>,
}

impl RobotState {
    pub fn qv(&self) -> VecQ {
        VecQ::from_column_slice(&self.q)
    }

    pub fn qdv(&self) -> VecQ {
        VecQ::from_column_slice(&self.qd)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }

    /// Anchors the foot where it currently is and switches to `domain`.
    pub fn anchored(mut self, model: &PlanarRobotModel, domain: Domain) -> Self {
        let foot = kinematics::poses(model, &self.q)[Body::Foot as usize];
        self.anchor = Some(FootAnchor {
            x: foot[0],
            z: foot[1],
            pitch: foot[2],
        });
        self.domain = domain;
        self
    }
}

/// Symmetric speed-derated input box.
pub fn torque_limits(model: &PlanarRobotModel, qd: &[f64]) -> (VecU, VecU) {
    let mut ub = VecU::zeros();
    for (i, lim) in model.actuator_limits().iter().enumerate() {
        let speed = qd[ACTUATED[i]].abs();
        ub[i] = lim.max_effort * (1.0 - speed / lim.max_speed).clamp(0.0, 1.0);
    }
    (-ub, ub)
}
