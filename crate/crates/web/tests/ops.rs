use std::f64::consts::PI;

use serde_json::Value;
use somersault_web::{liftoff_targets_json, plan_jump_json, run_scenario_json};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn liftoff_targets_turn_once_in_the_air() {
    let v = parse(&liftoff_targets_json(4.2, 0.1, 0.0, false).unwrap());
    let (t, w) = (
        v["flight_time"].as_f64().unwrap(),
        v["pitch_rate"].as_f64().unwrap(),
    );
    assert!((t - 2.0 * 4.2 / 9.81).abs() < 1e-12);
    assert!((w * t + 0.2 - 2.0 * PI).abs() < 1e-9);
    let back = parse(&liftoff_targets_json(4.2, 0.1, 0.0, true).unwrap());
    assert!(back["pitch_rate"].as_f64().unwrap() < 0.0);
    assert!(liftoff_targets_json(-1.0, 0.0, 0.0, false).is_err());
}

#[test]
fn plan_jump_returns_a_sampled_reference() {
    let v = parse(&plan_jump_json("{}").unwrap());
    let samples = v["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 121);
    let last = samples.last().unwrap();
    assert!((last["t"].as_f64().unwrap() - v["duration"].as_f64().unwrap()).abs() < 1e-12);
    assert!(last["momentum"].as_f64().unwrap() > 0.0);
}

#[test]
fn configs_are_validated() {
    assert!(plan_jump_json(r#"{"flywheel": "IV"}"#)
        .unwrap_err()
        .contains("flywheel"));
    assert!(plan_jump_json(r#"{"robot": "robot.json"}"#).is_err());
    assert!(plan_jump_json("not json").is_err());
}

#[test]
fn run_scenario_reports_and_animates() {
    let v = parse(&run_scenario_json(r#"{"direction": "backflip"}"#, 1.0 / 30.0).unwrap());
    assert_eq!(v["report"]["success"], true);
    let frames = v["frames"].as_array().unwrap();
    assert!(frames.len() > 60);
    assert_eq!(frames[0]["bodies"].as_array().unwrap().len(), 5);
    assert!(frames.iter().any(|f| f["stance"] == false));
    let rotation = v["report"]["net_rotation"].as_f64().unwrap();
    assert!((rotation + 2.0 * PI).abs() < 0.15);
}
