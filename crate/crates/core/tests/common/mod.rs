#![allow(dead_code)]

use std::path::PathBuf;

use somersault::pipeline::ScenarioConfig;

pub mod oracles;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs/scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).expect("shipped scenario loads")
}

/// Central difference of a vector function along direction `dir`.
pub fn directional_fd<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    f(&plus)
        .iter()
        .zip(f(&minus))
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect()
}

/// `|a − b| / max(1, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
