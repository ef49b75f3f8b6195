//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or a scenario config as JSON and
//! returns JSON. The `*_json` functions are the same operations for native
//! callers and tests.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use somersault::pipeline::{run_somersault, ScenarioConfig};
use somersault::robot::{poses, Body, BODY_COUNT};
use somersault::trajopt::{
    build_jump_nlp, default_guess, extract_reference, lift_off_targets_with_drop, solve_nlp,
    FlipDirection,
};

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse_config(config: &str) -> Result<ScenarioConfig> {
    let text = if config.trim().is_empty() {
        "{}"
    } else {
        config
    };
    let cfg = ScenarioConfig::from_json(text).map_err(err)?;
    if cfg.robot.is_some() || cfg.fslip.is_some() {
        return Err("model files are not available in the browser".into());
    }
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Ballistic flight time and lift-off pitch rate for one full turn.
pub fn liftoff_targets_json(zdot: f64, beta: f64, drop: f64, backflip: bool) -> Result<String> {
    let direction = if backflip {
        FlipDirection::Backflip
    } else {
        FlipDirection::Frontflip
    };
    let g = somersault::robot::PlanarRobotModel::default().gravity;
    let t = lift_off_targets_with_drop(zdot, beta, g, direction, drop).map_err(err)?;
    Ok(json!({
        "flight_time": t.flight_time,
        "pitch_rate": t.pitch_rate,
        "apex": zdot * zdot / (2.0 * g),
    })
    .to_string())
}

#[derive(Serialize)]
struct JumpSample {
    t: f64,
    leg_length: f64,
    com_x: f64,
    momentum: f64,
    pitch: f64,
}

/// Solves the jumping-phase trajectory optimization for a config.
pub fn plan_jump_json(config: &str) -> Result<String> {
    let cfg = parse_config(config)?;
    let model = cfg.model().map_err(err)?;
    let params = cfg.template(&model).map_err(err)?;
    let nlp = build_jump_nlp(&params, &cfg.jump_task(), &cfg.optimizer).map_err(err)?;
    let sol = solve_nlp(&nlp, &default_guess(&nlp), &cfg.optimizer.solver).map_err(err)?;
    let reference = extract_reference(&sol, &params).map_err(err)?;
    let n = 120;
    let samples: Vec<JumpSample> = (0..=n)
        .map(|i| {
            let t = reference.duration() * i as f64 / n as f64;
            let s = reference.sample(t);
            JumpSample {
                t,
                leg_length: s.leg_length,
                com_x: s.com_x,
                momentum: s.momentum,
                pitch: s.pitch,
            }
        })
        .collect();
    Ok(json!({
        "objective": sol.objective,
        "duration": sol.duration,
        "iterations": sol.iterations,
        "flight_time": sol.flight_time,
        "samples": samples,
    })
    .to_string())
}

#[derive(Serialize)]
struct Frame {
    t: f64,
    stance: bool,
    /// `(x, z, pitch)` per body in pelvis, flywheel, thigh, shin, foot order.
    bodies: [[f64; 3]; BODY_COUNT],
    flywheel_speed: f64,
}

/// Runs the closed-loop pipeline and returns the report with animation
/// frames `frame_dt` apart.
pub fn run_scenario_json(config: &str, frame_dt: f64) -> Result<String> {
    let cfg = parse_config(config)?;
    let model = cfg.model().map_err(err)?;
    let out = run_somersault(&cfg);
    let mut frames = Vec::new();
    if let Some(sim) = &out.sim {
        let mut next = f64::NEG_INFINITY;
        for s in &sim.samples {
            if s.t >= next {
                frames.push(Frame {
                    t: s.t,
                    stance: s.domain.is_stance(),
                    bodies: poses(&model, &s.q),
                    flywheel_speed: s.qd[somersault::robot::FLYWHEEL],
                });
                next = s.t + frame_dt.max(1e-3);
            }
        }
    }
    Ok(json!({
        "report": out.report,
        "take_off_ground": 0.0,
        "landing_ground": cfg.landing_ground(),
        "foot_length": model.foot_length,
        "flywheel_body": Body::Flywheel as usize,
        "frames": frames,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn liftoff_targets(
    zdot: f64,
    beta: f64,
    drop: f64,
    backflip: bool,
) -> std::result::Result<String, JsError> {
    liftoff_targets_json(zdot, beta, drop, backflip).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan_jump(config: &str) -> std::result::Result<String, JsError> {
    plan_jump_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn run_scenario(config: &str, frame_dt: f64) -> std::result::Result<String, JsError> {
    run_scenario_json(config, frame_dt).map_err(|e| JsError::new(&e))
}
