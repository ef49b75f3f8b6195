//! Invariant suite run by `somersault verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, ScenarioConfig};
use crate::robot::{
    centroidal_momentum, constrained_dynamics, contact_set, grf_affine_map, impact_map,
    kinetic_energy, mass_matrix, simulate, standing_state, torque_limits, Controller, Domain,
    PlanarRobotModel, RobotState, SimOptions, SimOutcome, VecU, FLYWHEEL, HIP, MOTOR, NQ, PITCH,
    SPRING, TOE,
};
use crate::trajopt::{build_jump_nlp, default_guess, recheck, solve_nlp};
use crate::trajopt::{PhaseKind, ReferenceBundle};
use crate::tsc::qp::{kkt_residual, solve_qp, QpOptions};
use crate::tsc::{StanceTarget, TscController, TscMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantCheck {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

/// A standing pose with random joint offsets and velocities.
pub fn random_state(model: &PlanarRobotModel, rng: &mut impl Rng, domain: Domain) -> RobotState {
    let mut s = standing_state(model, 0.8, 0.0).expect("nominal standing pose exists");
    s.q[PITCH] += rng.gen_range(-0.5..0.5);
    s.q[FLYWHEEL] = rng.gen_range(-3.0..3.0);
    s.q[HIP] += rng.gen_range(-0.3..0.3);
    s.q[MOTOR] += rng.gen_range(-0.1..0.1);
    s.q[SPRING] += rng.gen_range(-0.02..0.02);
    s.q[TOE] += rng.gen_range(-0.3..0.3);
    for v in s.qd.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    s.qd[FLYWHEEL] = rng.gen_range(-50.0..50.0);
    s.domain = domain;
    s.anchor = None;
    if domain.is_stance() {
        s = s.anchored(model, domain);
    }
    s
}

pub fn random_input(model: &PlanarRobotModel, rng: &mut impl Rng) -> VecU {
    let lim = model.actuator_limits();
    VecU::from_fn(|i, _| rng.gen_range(-1.0..1.0) * lim[i].max_effort)
}

/// Random piecewise-constant torques on top of a PD hold of the hip, leg
/// motor and toe about `hold`, clipped to the speed-derated box. The hold
/// keeps the leg from collapsing through zero length.
pub struct RandomTorques {
    pub segments: Vec<VecU>,
    pub period: f64,
    pub hold: [f64; NQ],
}

impl RandomTorques {
    pub fn new(
        model: &PlanarRobotModel,
        rng: &mut impl Rng,
        start: &RobotState,
        segments: usize,
        period: f64,
    ) -> Self {
        Self {
            segments: (0..segments)
                .map(|_| random_input(model, rng) * 0.2)
                .collect(),
            period,
            hold: start.q,
        }
    }
}

impl Controller for RandomTorques {
    fn control(&mut self, model: &PlanarRobotModel, s: &RobotState) -> VecU {
        let k = ((s.time / self.period) as usize).min(self.segments.len() - 1);
        let mut u = self.segments[k];
        for (i, j, kp, kd) in [
            (1, HIP, 300.0, 30.0),
            (2, MOTOR, 8000.0, 300.0),
            (3, TOE, 30.0, 1.0),
        ] {
            u[i] += kp * (self.hold[j] - s.q[j]) - kd * s.qd[j];
        }
        let (lo, hi) = torque_limits(model, &s.qd);
        u.zip_zip_map(&lo, &hi, |u, l, h| u.clamp(l, h))
    }
}

/// Worst per-second relative drift of `H_pitch` over one second of flight
/// under [`RandomTorques`]; infinite if the simulation aborts.
pub fn flight_momentum_drift(model: &PlanarRobotModel, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = random_state(model, &mut rng, Domain::Flight);
    start.q[crate::robot::Z] += 5.0;
    let mut ctrl = RandomTorques::new(model, &mut rng, &start, 20, 0.05);
    let opts = SimOptions {
        t_max: 1.0,
        landing_ground: -1e6,
        ..SimOptions::default()
    };
    let sim = simulate(model, &mut ctrl, start, &opts);
    if sim.outcome != SimOutcome::Completed {
        return f64::INFINITY;
    }
    let h0 = sim.samples[0].h_pitch;
    sim.samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| (s.h_pitch - h0).abs() / h0.abs().max(1.0) / s.t.max(1.0))
        .fold(0.0, f64::max)
}

/// Runs the invariant suite on the config's robot and jump task.
pub fn verify(config: &ScenarioConfig) -> Result<Vec<InvariantCheck>> {
    config.validate()?;
    let model = config.model()?;
    let params = config.template(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut checks = Vec::new();

    let min_eig = (0..100)
        .map(|_| {
            let s = random_state(&model, &mut rng, Domain::Flight);
            mass_matrix(&model, &s.q).symmetric_eigenvalues().min()
        })
        .fold(f64::INFINITY, f64::min);
    checks.push(InvariantCheck::new(
        "mass matrix positive definite (−λ_min)",
        -min_eig,
        0.0,
    ));

    checks.push(InvariantCheck::new(
        "flight momentum drift per second",
        flight_momentum_drift(&model, config.seed),
        1e-8,
    ));

    let mut grf_err: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&model, &mut rng, Domain::Landing);
        let u = random_input(&model, &mut rng);
        let c = contact_set(&model, &s.q, &s.qd);
        let map = grf_affine_map(&model, &s.q, &s.qd, &c)
            .map_err(|e| super::PipelineError::Config(e.to_string()))?;
        let (_, f) = constrained_dynamics(&model, &s.q, &s.qd, &u, &c)
            .map_err(|e| super::PipelineError::Config(e.to_string()))?;
        grf_err = grf_err.max((map.a * u + map.b - f).amax() / f.amax().max(1.0));
    }
    checks.push(InvariantCheck::new(
        "GRF elimination vs constrained dynamics",
        grf_err,
        1e-10,
    ));

    let mut vel: f64 = 0.0;
    let mut gain = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let mut pre = random_state(&model, &mut rng, Domain::Flight);
        for v in pre.qd.iter_mut() {
            *v *= 2.0;
        }
        let Ok(post) = impact_map(&model, &pre) else {
            continue;
        };
        let c = contact_set(&model, &post.q, &post.qd);
        let qd = nalgebra::SVector::<f64, NQ>::from_column_slice(&post.qd);
        vel = vel.max((c.jac * qd).amax());
        let ke0 = kinetic_energy(&model, &pre.q, &pre.qd);
        gain = gain.max((kinetic_energy(&model, &post.q, &post.qd) - ke0) / ke0.max(1.0));
    }
    checks.push(InvariantCheck::new(
        "post-impact constraint velocity",
        vel,
        1e-10,
    ));
    checks.push(InvariantCheck::new(
        "impact kinetic energy gain",
        gain.max(0.0),
        1e-12,
    ));

    let nlp = build_jump_nlp(&params, &config.jump_task(), &config.optimizer)
        .map_err(|e| super::PipelineError::Config(e.to_string()))?;
    match solve_nlp(&nlp, &default_guess(&nlp), &config.optimizer.solver)
        .and_then(|sol| recheck(&nlp, &sol.states, &sol.controls, sol.duration))
    {
        Ok(r) => {
            checks.push(InvariantCheck::new(
                "jump NLP equality residual",
                r.max_eq,
                1e-6,
            ));
            checks.push(InvariantCheck::new(
                "jump NLP inequality violation",
                r.max_ineq,
                1e-6,
            ));
            checks.push(InvariantCheck::new(
                "jump NLP final normal force",
                r.final_normal_force.abs(),
                1e-6,
            ));
            checks.push(InvariantCheck::new(
                "jump NLP lift-off momentum error",
                r.liftoff_momentum_rel_error.unwrap_or(f64::INFINITY),
                1e-4,
            ));
        }
        Err(e) => {
            let mut c = InvariantCheck::new("jump NLP solve", f64::INFINITY, 0.0);
            c.name = format!("jump NLP solve ({e})");
            checks.push(c);
        }
    }

    let mut worst_kkt: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&model, &mut rng, Domain::Landing);
        let reference = ReferenceBundle::hold(
            PhaseKind::Landing,
            0.8,
            s.q[crate::robot::X],
            s.q[crate::robot::X],
        );
        let tsc = TscController::new(
            config.gains,
            TscMode::Stance(StanceTarget {
                reference,
                start: 0.0,
                pitch_offset: 0.0,
            }),
        );
        let Ok((prob, _)) = tsc.problem(&model, &s) else {
            continue;
        };
        let (g, c) = prob.cost_terms();
        let (a, b) = prob.constraint_rows();
        let sol = solve_qp(&g, &c, &a, &b, &[], &QpOptions::default());
        if sol.status == crate::tsc::qp::QpStatus::Optimal {
            let scale = g.amax().max(c.amax()).max(1.0);
            worst_kkt = worst_kkt.max(kkt_residual(&g, &c, &a, &b, &sol) / scale);
        }
    }
    checks.push(InvariantCheck::new(
        "TSC QP KKT residual (scaled)",
        worst_kkt,
        1e-8,
    ));

    let s = standing_state(&model, config.standing_leg_length, 0.0)
        .map_err(|e| super::PipelineError::Config(e.to_string()))?;
    let cm = centroidal_momentum(&model, &s.q, &s.qd);
    checks.push(InvariantCheck::new(
        "standing momentum",
        cm.h_pitch.abs(),
        1e-12,
    ));
    Ok(checks)
}
