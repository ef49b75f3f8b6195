use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_somersault, LandingPlan, PipelineError, Result, RunOutput, ScenarioConfig, Stage};
use crate::flight::FlightPlan;
use crate::robot::{
    centroidal_momentum, virtual_leg, PlanarRobotModel, RobotState, SimEventKind, SimResult,
    FLYWHEEL, PITCH,
};
use crate::tsc::{TickLog, TscStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: SimEventKind,
    pub time: f64,
    pub bracket: [f64; 2],
}

/// Template-level summary of a robot state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub time: f64,
    pub com: [f64; 2],
    pub com_velocity: [f64; 2],
    pub leg_angle: f64,
    pub leg_length: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub h_pitch: f64,
    pub q: [f64; 8],
    pub qd: [f64; 8],
}

impl StateSummary {
    fn of(model: &PlanarRobotModel, s: &RobotState) -> Self {
        let leg = virtual_leg(model, &s.q, &s.qd);
        Self {
            time: s.time,
            com: leg.com,
            com_velocity: leg.com_velocity,
            leg_angle: leg.angle,
            leg_length: leg.actuated,
            pitch: s.q[PITCH],
            pitch_rate: s.qd[PITCH],
            h_pitch: centroidal_momentum(model, &s.q, &s.qd).h_pitch,
            q: s.q,
            qd: s.qd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleMetrics {
    pub final_zdot: f64,
    /// `|F_spring − m g| / m g` at the end of the window.
    pub spring_force_error: f64,
    /// Time after touch-down from which the settle bounds held to the end.
    pub settle_time: Option<f64>,
    pub settled: bool,
}

/// Worst values over all stance ticks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintMaxima {
    pub min_fz: f64,
    /// max(|F_x| − μF_z).
    pub friction: f64,
    /// max(|m_y| − (l/2)F_z).
    pub zmp: f64,
    /// Largest input excess over the speed-derated box.
    pub torque_box: f64,
    pub stance_ticks: usize,
    pub relaxed_ticks: usize,
    pub max_kkt_residual: f64,
}

pub const SETTLE_ZDOT: f64 = 0.01;
pub const SETTLE_FORCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub direction: String,
    pub flywheel: String,
    pub success: bool,
    pub failure_stage: Option<Stage>,
    pub message: Option<String>,
    pub exit_code: i32,
    pub jump_objective: Option<f64>,
    pub jump_duration: Option<f64>,
    pub events: Vec<EventRecord>,
    pub lift_off: Option<StateSummary>,
    pub touch_down: Option<StateSummary>,
    pub flight_time: Option<f64>,
    pub planned_flight_time: Option<f64>,
    /// Pelvis pitch change from the start to touch-down.
    pub net_rotation: Option<f64>,
    /// COM x change from the start to touch-down.
    pub touchdown_displacement: Option<f64>,
    pub landing_fallback: Option<bool>,
    pub settle: Option<SettleMetrics>,
    pub constraints: ConstraintMaxima,
    /// Peak |flywheel speed| relative to the pelvis (rad/s).
    pub peak_flywheel_speed: f64,
    pub final_time: f64,
    /// Wall-clock seconds per stage; kept out of the JSON report so reruns
    /// compare equal.
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            scenario: config.name.clone(),
            direction: config.direction.name().into(),
            flywheel: config.flywheel.clone(),
            success: true,
            failure_stage: None,
            message: None,
            exit_code: 0,
            jump_objective: None,
            jump_duration: None,
            events: Vec::new(),
            lift_off: None,
            touch_down: None,
            flight_time: None,
            planned_flight_time: None,
            net_rotation: None,
            touchdown_displacement: None,
            landing_fallback: None,
            settle: None,
            constraints: ConstraintMaxima::default(),
            peak_flywheel_speed: 0.0,
            final_time: 0.0,
            timing: BTreeMap::new(),
        }
    }

    pub fn fail(&mut self, stage: Stage, message: String) {
        self.success = false;
        self.failure_stage = Some(stage);
        self.message = Some(message);
        self.exit_code = stage.exit_code();
    }

    pub(super) fn record_simulation(
        &mut self,
        model: &PlanarRobotModel,
        start: &RobotState,
        sim: &SimResult,
        log: &[TickLog],
        flight: Option<&FlightPlan>,
        landing: Option<&LandingPlan>,
    ) {
        self.events = sim
            .events
            .iter()
            .map(|e| EventRecord {
                kind: e.kind,
                time: e.time,
                bracket: e.bracket,
            })
            .collect();
        self.final_time = sim.final_state.time;
        let com0 = virtual_leg(model, &start.q, &start.qd).com;
        let lo = sim.event(SimEventKind::LiftOff);
        let td = sim.event(SimEventKind::TouchDown);
        self.lift_off = lo.map(|e| StateSummary::of(model, &e.post));
        if let Some(td) = td {
            let s = StateSummary::of(model, &td.pre);
            self.net_rotation = Some(s.pitch - start.q[PITCH]);
            self.touchdown_displacement = Some(s.com[0] - com0[0]);
            self.touch_down = Some(s);
            self.flight_time = lo.map(|lo| td.time - lo.time);
        }
        self.planned_flight_time = flight.map(|p| p.flight_time);
        self.landing_fallback = landing.map(|l| l.fallback);
        self.peak_flywheel_speed = sim
            .samples
            .iter()
            .map(|s| s.qd[FLYWHEEL].abs())
            .fold(0.0, f64::max);

        let mut c = ConstraintMaxima {
            min_fz: f64::INFINITY,
            friction: f64::NEG_INFINITY,
            zmp: f64::NEG_INFINITY,
            ..ConstraintMaxima::default()
        };
        for s in sim.samples.iter().filter(|s| s.domain.is_stance()) {
            c.min_fz = c.min_fz.min(s.fz);
            c.friction = c.friction.max(s.fx.abs() - model.friction_mu * s.fz);
            c.zmp = c.zmp.max(s.my.abs() - 0.5 * model.foot_length * s.fz);
            c.stance_ticks += 1;
        }
        for r in log {
            c.torque_box = c.torque_box.max(r.box_violation);
            if r.domain.is_stance() && r.status != TscStatus::Optimal {
                c.relaxed_ticks += 1;
            }
            if r.kkt_residual.is_finite() {
                c.max_kkt_residual = c.max_kkt_residual.max(r.kkt_residual);
            }
        }
        if c.stance_ticks == 0 {
            c.min_fz = 0.0;
            c.friction = 0.0;
            c.zmp = 0.0;
        }
        self.constraints = c;

        if let Some(td) = td {
            self.settle = Some(settle_metrics(model, sim, td.time));
        }
    }
}

fn settle_metrics(model: &PlanarRobotModel, sim: &SimResult, td_time: f64) -> SettleMetrics {
    let weight = model.weight();
    let check = |q: &[f64], qd: &[f64]| {
        let zdot = virtual_leg(model, q, qd).com_velocity[1];
        let err = (model.leg_spring_force(q, qd) - weight).abs() / weight;
        (zdot, err)
    };
    let mut settle_time = None;
    for s in sim.samples.iter().filter(|s| s.t >= td_time) {
        let (zdot, err) = check(&s.q, &s.qd);
        if zdot.abs() < SETTLE_ZDOT && err < SETTLE_FORCE {
            settle_time.get_or_insert(s.t - td_time);
        } else {
            settle_time = None;
        }
    }
    let f = &sim.final_state;
    let (final_zdot, spring_force_error) = check(&f.q, &f.qd);
    let ok = final_zdot.abs() < SETTLE_ZDOT && spring_force_error < SETTLE_FORCE;
    if !ok {
        settle_time = None;
    }
    SettleMetrics {
        final_zdot,
        spring_force_error,
        settled: ok && settle_time.is_some(),
        settle_time,
    }
}

/// CSV and JSON text of a run, ready to be written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub jump_reference: Option<String>,
    pub flight_plan: Option<String>,
    pub landing_reference: Option<String>,
    pub trajectory: Option<String>,
    pub tsc_log: Option<String>,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| PipelineError::Io {
        path,
        message: e.to_string(),
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

/// Writes the report, event log, timing and every available CSV into `dir`.
pub fn export_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
        path: dir.into(),
        message: e.to_string(),
    })?;
    write(dir, "report.json", &json(&out.report))?;
    write(dir, "events.json", &json(&out.report.events))?;
    write(dir, "timing.json", &json(&out.report.timing))?;
    let a = &out.artifacts;
    for (name, text) in [
        ("jump_reference.csv", &a.jump_reference),
        ("flight_plan.csv", &a.flight_plan),
        ("landing_reference.csv", &a.landing_reference),
        ("trajectory.csv", &a.trajectory),
        ("tsc_log.csv", &a.tsc_log),
    ] {
        if let Some(text) = text {
            write(dir, name, text)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub success: bool,
    pub stage: Option<Stage>,
    pub exit_code: i32,
    pub net_rotation: Option<f64>,
    pub touchdown_displacement: Option<f64>,
    pub settled: bool,
    pub peak_flywheel_speed: f64,
}

impl SummaryRow {
    pub fn of(r: &RunReport) -> Self {
        Self {
            scenario: r.scenario.clone(),
            success: r.success,
            stage: r.failure_stage,
            exit_code: r.exit_code,
            net_rotation: r.net_rotation,
            touchdown_displacement: r.touchdown_displacement,
            settled: r.settle.as_ref().is_some_and(|s| s.settled),
            peak_flywheel_speed: r.peak_flywheel_speed,
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("scenario,result,exit_code,net_rotation,touchdown_displacement,settled,peak_flywheel_speed\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6}",
            r.scenario,
            if r.success { "pass" } else { "fail" },
            r.exit_code,
            opt(r.net_rotation),
            opt(r.touchdown_displacement),
            r.settled,
            r.peak_flywheel_speed
        );
    }
    out
}

/// Runs independent scenarios on parallel threads, exporting each run to
/// its configured output directory. One failing run does not stop the rest.
pub fn batch_run(configs: &[ScenarioConfig]) -> Vec<(SummaryRow, Option<String>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                scope.spawn(move || {
                    let out = run_somersault(cfg);
                    let export = cfg
                        .output_dir
                        .as_ref()
                        .and_then(|dir| export_artifacts(&out, dir).err())
                        .map(|e| e.to_string());
                    (SummaryRow::of(&out.report), export)
                })
            })
            .collect();
        handles
            .into_iter()
            .zip(configs)
            .map(|(h, cfg)| {
                h.join().unwrap_or_else(|_| {
                    let mut r = RunReport::new(cfg);
                    r.fail(Stage::Setup, "run panicked".into());
                    (SummaryRow::of(&r), None)
                })
            })
            .collect()
    })
}
