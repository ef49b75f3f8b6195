//! The full somersault: jump optimization, tracked jump, flight plan,
//! tracked flight, touch-down replanning and tracked landing.

mod report;
mod verify;

pub use report::{
    batch_run, export_artifacts, summary_csv, ConstraintMaxima, EventRecord, RunArtifacts,
    RunReport, SettleMetrics, SummaryRow,
};
pub use verify::{
    flight_momentum_drift, random_input, random_state, verify, InvariantCheck, RandomTorques,
};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::flight::{plan_flight, FlightOptions, FlightPlan};
use crate::fslip::FslipParams;
use crate::robot::{
    fslip_params, fslip_projection, simulate, standing_state, Controller, FlywheelSpec,
    PlanarRobotModel, RobotState, SimEvent, SimEventKind, SimOptions, SimOutcome, SimResult, VecU,
    PITCH,
};
use crate::trajopt::{
    build_jump_nlp, build_landing_nlp, default_guess, extract_reference, solve_nlp, FlipDirection,
    JumpTask, NlpSolution, OptimizerSettings, PhaseKind, ReferenceBundle,
};
use crate::tsc::{FlightTarget, Gains, StanceTarget, TscController, TscMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// One somersault scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Robot model JSON; the built-in model when absent.
    pub robot: Option<PathBuf>,
    /// Template parameter JSON; regressed from the robot when absent.
    pub fslip: Option<PathBuf>,
    pub direction: FlipDirection,
    /// Vertical COM velocity at lift-off (m/s).
    pub liftoff_zdot: f64,
    /// COM displacement from the standing pose to touch-down (m).
    pub forward_distance: Option<f64>,
    pub max_leg_angle: Option<f64>,
    pub standing_leg_length: f64,
    /// Height of the take-off surface above the landing surface, known to
    /// the planners (m).
    pub platform_height: f64,
    /// Landing surface offset the planners are not told about (m).
    pub ground_offset: f64,
    pub flywheel: String,
    /// Overrides the flywheel stall torque.
    pub flywheel_torque_cap: Option<f64>,
    pub leg_accel_bound: f64,
    pub optimizer: OptimizerSettings,
    pub gains: Gains,
    pub flight: FlightOptions,
    /// Simulated time after touch-down.
    pub settle_window: f64,
    pub dt_ctrl: f64,
    pub dt_int: f64,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Amplitude of a seeded random initial velocity perturbation.
    pub perturbation: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "somersault".into(),
            robot: None,
            fslip: None,
            direction: FlipDirection::Frontflip,
            liftoff_zdot: 4.2,
            forward_distance: None,
            max_leg_angle: Some(0.35),
            standing_leg_length: 0.8,
            platform_height: 0.0,
            ground_offset: 0.0,
            flywheel: "I".into(),
            flywheel_torque_cap: None,
            leg_accel_bound: 40.0,
            optimizer: OptimizerSettings {
                jump_duration_bounds: [0.3, 0.8],
                ..OptimizerSettings::default()
            },
            gains: Gains {
                momentum_weight: 0.1,
                ..Gains::default()
            },
            flight: FlightOptions {
                kp: 20.0,
                ..FlightOptions::default()
            },
            settle_window: 2.0,
            dt_ctrl: 5e-4,
            dt_int: 1e-4,
            output_dir: None,
            seed: 0,
            perturbation: 0.0,
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ScenarioConfig {
    /// Reads a config; relative model paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.into(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text).map_err(|e| PipelineError::Io {
            path: path.into(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.robot, &mut cfg.fslip].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config, filling every omitted field, nested ones included,
    /// from [`ScenarioConfig::default`]. Does not validate.
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, serde_json::from_str(text)?);
        serde_json::from_value(base)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.robot, &self.fslip].into_iter().flatten() {
            if !p.exists() {
                return Err(PipelineError::Config(format!(
                    "{} does not exist",
                    p.display()
                )));
            }
        }
        if FlywheelSpec::by_name(&self.flywheel).is_none() {
            return Err(PipelineError::Config(format!(
                "unknown flywheel spec `{}`",
                self.flywheel
            )));
        }
        if !(self.settle_window > 0.0 && self.dt_ctrl > 0.0 && self.dt_int > 0.0) {
            return Err(PipelineError::Config(
                "time steps and settle window must be positive".into(),
            ));
        }
        if !(self.perturbation >= 0.0) {
            return Err(PipelineError::Config(
                "perturbation must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<PlanarRobotModel> {
        let base = match &self.robot {
            Some(p) => {
                PlanarRobotModel::load(p).map_err(|e| PipelineError::Config(e.to_string()))?
            }
            None => PlanarRobotModel::default(),
        };
        let mut spec = FlywheelSpec::by_name(&self.flywheel).ok_or_else(|| {
            PipelineError::Config(format!("unknown flywheel spec `{}`", self.flywheel))
        })?;
        if let Some(cap) = self.flywheel_torque_cap {
            spec.max_torque = cap;
        }
        let model = base.with_flywheel(spec);
        model
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(model)
    }

    pub fn template(&self, model: &PlanarRobotModel) -> Result<FslipParams> {
        match &self.fslip {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Io {
                    path: p.clone(),
                    message: e.to_string(),
                })?;
                let params: FslipParams =
                    serde_json::from_str(&text).map_err(|e| PipelineError::Io {
                        path: p.clone(),
                        message: e.to_string(),
                    })?;
                params
                    .validate()
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(params)
            }
            None => fslip_params(model, self.leg_accel_bound)
                .map_err(|e| PipelineError::Config(e.to_string())),
        }
    }

    pub fn jump_task(&self) -> JumpTask {
        JumpTask {
            direction: self.direction,
            liftoff_zdot: self.liftoff_zdot,
            forward_distance: self.forward_distance,
            landing_drop: self.platform_height,
            max_leg_angle: self.max_leg_angle,
            standing_leg_length: self.standing_leg_length,
        }
    }

    /// Landing surface height in the frame where the take-off surface is zero.
    pub fn landing_ground(&self) -> f64 {
        self.ground_offset - self.platform_height
    }
}

/// Stage a run stopped in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    JumpPlanning,
    Jumping,
    Flight,
    LandingPlanning,
    Landing,
}

impl Stage {
    /// Process exit code for a run that failed in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Setup | Stage::JumpPlanning => 2,
            Stage::Jumping | Stage::Flight => 3,
            Stage::LandingPlanning | Stage::Landing => 4,
        }
    }
}

/// Outcome of touch-down replanning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandingPlan {
    pub reference: ReferenceBundle,
    /// Set when the NLP failed and a crouch-and-hold reference is used.
    pub fallback: bool,
    pub message: Option<String>,
    pub objective: Option<f64>,
    pub seconds: f64,
}

/// Rest COM height of the template standing at `leg_length` above the
/// ground it lands on.
pub fn rest_height(params: &FslipParams, leg_length: f64) -> f64 {
    crate::fslip::FslipState::standing(params, leg_length)
        .map(|s| s.z)
        .unwrap_or(leg_length)
}

/// Landing references from the measured post-impact state.
pub fn replan_landing(
    model: &PlanarRobotModel,
    params: &FslipParams,
    post_impact: &RobotState,
    config: &ScenarioConfig,
) -> LandingPlan {
    let clock = Stopwatch::start();
    let init = fslip_projection(model, params, post_impact);
    let rest = rest_height(params, config.standing_leg_length);
    let solved = build_landing_nlp(params, &init, rest, &config.optimizer)
        .and_then(|nlp| solve_nlp(&nlp, &default_guess(&nlp), &config.optimizer.solver))
        .and_then(|sol| Ok((extract_reference(&sol, params)?, sol.objective)));
    match solved {
        Ok((reference, objective)) => LandingPlan {
            reference,
            fallback: false,
            message: None,
            objective: Some(objective),
            seconds: clock.seconds(),
        },
        Err(e) => {
            let l = init
                .leg_length
                .clamp(params.leg_length_bounds[0], params.leg_length_bounds[1]);
            let mut reference = ReferenceBundle::hold(
                PhaseKind::Landing,
                l.min(config.standing_leg_length),
                init.foot_x,
                init.foot_x,
            );
            reference.fallback = true;
            LandingPlan {
                reference,
                fallback: true,
                message: Some(e.to_string()),
                objective: None,
                seconds: clock.seconds(),
            }
        }
    }
}

/// Whole-turn pitch offset that puts `pitch` nearest `reference_pitch`.
fn turns_offset(pitch: f64, reference_pitch: f64) -> f64 {
    2.0 * PI * ((pitch - reference_pitch) / (2.0 * PI)).round()
}

/// Tracks the references and swaps them at the domain switches.
struct PipelineController<'a> {
    tsc: TscController,
    params: &'a FslipParams,
    config: &'a ScenarioConfig,
    flight_plan: Option<FlightPlan>,
    landing: Option<LandingPlan>,
    failure: Option<(Stage, String)>,
    stage_seconds: BTreeMap<String, f64>,
}

impl Controller for PipelineController<'_> {
    fn control(&mut self, model: &PlanarRobotModel, state: &RobotState) -> VecU {
        self.tsc.control(model, state)
    }

    fn on_event(
        &mut self,
        model: &PlanarRobotModel,
        event: &SimEvent,
    ) -> std::result::Result<(), String> {
        match event.kind {
            SimEventKind::LiftOff => {
                let clock = Stopwatch::start();
                let plan = plan_flight(
                    model,
                    &event.post,
                    self.config.direction,
                    self.config.platform_height,
                    &self.config.flight,
                );
                *self
                    .stage_seconds
                    .entry("flight_planning".into())
                    .or_default() += clock.seconds();
                match plan {
                    Ok(plan) => {
                        let target = FlightTarget::new(model, plan.clone(), &event.post);
                        self.flight_plan = Some(plan);
                        self.tsc.set_mode(TscMode::Flight(target));
                        Ok(())
                    }
                    Err(e) => {
                        let msg = format!("flight planning failed: {e}");
                        self.failure = Some((Stage::Flight, msg.clone()));
                        Err(msg)
                    }
                }
            }
            SimEventKind::TouchDown => {
                let plan = replan_landing(model, self.params, &event.post, self.config);
                *self
                    .stage_seconds
                    .entry("landing_planning".into())
                    .or_default() += plan.seconds;
                let pitch_offset =
                    turns_offset(event.post.q[PITCH], plan.reference.sample(0.0).pitch);
                self.tsc.set_mode(TscMode::Stance(StanceTarget {
                    reference: plan.reference.clone(),
                    start: event.time,
                    pitch_offset,
                }));
                self.landing = Some(plan);
                Ok(())
            }
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: RunArtifacts,
    pub sim: Option<SimResult>,
    pub jump_solution: Option<NlpSolution>,
}

fn perturbed(mut state: RobotState, config: &ScenarioConfig) -> RobotState {
    if config.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for v in state.qd.iter_mut() {
            *v += config.perturbation * rng.gen_range(-1.0..1.0);
        }
    }
    state
}

pub fn run_somersault(config: &ScenarioConfig) -> RunOutput {
    let mut report = RunReport::new(config);
    let mut artifacts = RunArtifacts::default();
    let mut timing = BTreeMap::new();
    let fail = |mut report: RunReport, artifacts, stage: Stage, msg: String, timing, sim, jump| {
        report.fail(stage, msg);
        report.timing = timing;
        RunOutput {
            report,
            artifacts,
            sim,
            jump_solution: jump,
        }
    };

    let clock = Stopwatch::start();
    let setup = config
        .validate()
        .and_then(|_| config.model())
        .and_then(|m| Ok((config.template(&m)?, m)));
    let (params, model) = match setup {
        Ok(v) => v,
        Err(e) => {
            return fail(
                report,
                artifacts,
                Stage::Setup,
                e.to_string(),
                timing,
                None,
                None,
            )
        }
    };
    timing.insert("setup".into(), clock.seconds());

    let clock = Stopwatch::start();
    let jump = build_jump_nlp(&params, &config.jump_task(), &config.optimizer)
        .and_then(|nlp| solve_nlp(&nlp, &default_guess(&nlp), &config.optimizer.solver));
    timing.insert("jump_planning".into(), clock.seconds());
    let (jump_sol, jump_ref) =
        match jump.and_then(|sol| Ok((extract_reference(&sol, &params)?, sol))) {
            Ok((r, sol)) => (sol, r),
            Err(e) => {
                return fail(
                    report,
                    artifacts,
                    Stage::JumpPlanning,
                    e.to_string(),
                    timing,
                    None,
                    None,
                )
            }
        };
    report.jump_objective = Some(jump_sol.objective);
    report.jump_duration = Some(jump_sol.duration);
    artifacts.jump_reference = Some(jump_ref.to_csv(0.01));

    let start = match standing_state(&model, config.standing_leg_length, 0.0) {
        Ok(s) => perturbed(s, config),
        Err(e) => {
            return fail(
                report,
                artifacts,
                Stage::Setup,
                e.to_string(),
                timing,
                None,
                Some(jump_sol),
            )
        }
    };

    let mut ctrl = PipelineController {
        tsc: TscController::new(
            config.gains,
            TscMode::Stance(StanceTarget {
                reference: jump_ref,
                start: 0.0,
                pitch_offset: 0.0,
            }),
        ),
        params: &params,
        config,
        flight_plan: None,
        landing: None,
        failure: None,
        stage_seconds: BTreeMap::new(),
    };
    let opts = SimOptions {
        dt_ctrl: config.dt_ctrl,
        dt_int: config.dt_int,
        t_max: config.optimizer.jump_duration_bounds[1] + 5.0 + config.settle_window,
        landing_ground: config.landing_ground(),
        stop_after_touchdown: Some(config.settle_window),
        ..SimOptions::default()
    };
    let clock = Stopwatch::start();
    let sim = simulate(&model, &mut ctrl, start.clone(), &opts);
    let sim_seconds = clock.seconds();
    timing.extend(ctrl.stage_seconds.clone());
    timing.insert(
        "simulation".into(),
        sim_seconds - ctrl.stage_seconds.values().sum::<f64>(),
    );
    timing.insert("qp_mean".into(), ctrl.tsc.mean_qp_seconds());

    artifacts.trajectory = Some(sim.to_csv());
    artifacts.tsc_log = Some(ctrl.tsc.log_csv());
    artifacts.flight_plan = ctrl.flight_plan.as_ref().map(|p| p.to_csv(0.005));
    artifacts.landing_reference = ctrl.landing.as_ref().map(|l| l.reference.to_csv(0.01));
    report.record_simulation(
        &model,
        &start,
        &sim,
        &ctrl.tsc.log,
        ctrl.flight_plan.as_ref(),
        ctrl.landing.as_ref(),
    );

    let stage_failure = ctrl.failure.clone().or_else(|| match &sim.outcome {
        SimOutcome::Aborted(msg) => {
            let stage = match (
                sim.event(SimEventKind::LiftOff),
                sim.event(SimEventKind::TouchDown),
            ) {
                (None, _) => Stage::Jumping,
                (Some(_), None) => Stage::Flight,
                _ => Stage::Landing,
            };
            Some((stage, msg.clone()))
        }
        SimOutcome::Completed => {
            if sim.event(SimEventKind::LiftOff).is_none() {
                Some((Stage::Jumping, "no lift-off before the time limit".into()))
            } else if sim.event(SimEventKind::TouchDown).is_none() {
                Some((Stage::Flight, "no touch-down before the time limit".into()))
            } else if let Some(l) = ctrl.landing.as_ref().filter(|l| l.fallback) {
                Some((
                    Stage::LandingPlanning,
                    format!(
                        "landing NLP failed, held a crouch: {}",
                        l.message.clone().unwrap_or_default()
                    ),
                ))
            } else if !report.settle.as_ref().is_some_and(|s| s.settled) {
                Some((Stage::Landing, "did not settle inside the window".into()))
            } else {
                None
            }
        }
    });
    let sim = Some(sim);
    match stage_failure {
        Some((stage, msg)) => fail(report, artifacts, stage, msg, timing, sim, Some(jump_sol)),
        None => {
            report.timing = timing;
            RunOutput {
                report,
                artifacts,
                sim,
                jump_solution: Some(jump_sol),
            }
        }
    }
}
