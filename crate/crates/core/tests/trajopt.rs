mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use somersault::fslip::{FslipParams, FslipState};
use somersault::robot::{fslip_params, PlanarRobotModel};
use somersault::trajopt::{
    build_jump_nlp, build_landing_nlp, default_guess, lift_off_targets_with_drop, solve_nlp,
    FlipDirection, JumpTask, NlpProblem, OptimizerSettings,
};

use common::oracles::{audit_jump, nlp_derivative_error};
use common::scenario;

fn params() -> FslipParams {
    fslip_params(&PlanarRobotModel::default(), 40.0).unwrap()
}

fn settings() -> OptimizerSettings {
    scenario("frontflip").optimizer
}

fn jump_task(direction: FlipDirection) -> JumpTask {
    let mut task = scenario("frontflip").jump_task();
    task.direction = direction;
    task
}

fn landing_nlp(p: &FslipParams) -> NlpProblem {
    let init = FslipState {
        x: -0.05,
        z: 0.72,
        theta: 2.0 * PI + 0.1,
        leg_length: 0.8,
        xdot: 0.3,
        zdot: -3.5,
        thetadot: 1.0,
        leg_rate: 0.0,
        foot_x: 0.0,
    };
    let rest = FslipState::standing(p, 0.8).unwrap().z;
    build_landing_nlp(p, &init, rest, &settings()).unwrap()
}

fn check_derivatives(nlp: &NlpProblem, seed: u64, points: usize) {
    let worst = nlp_derivative_error(nlp, seed, points);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn jump_nlp_derivatives_match_central_differences() {
    let p = params();
    check_derivatives(
        &build_jump_nlp(&p, &jump_task(FlipDirection::Frontflip), &settings()).unwrap(),
        1,
        50,
    );
    check_derivatives(
        &build_jump_nlp(&p, &jump_task(FlipDirection::Backflip), &settings()).unwrap(),
        2,
        20,
    );
}

#[test]
fn landing_nlp_derivatives_match_central_differences() {
    check_derivatives(&landing_nlp(&params()), 3, 30);
}

#[test]
fn solved_jumps_pass_an_independent_audit() {
    let p = params();
    for direction in [FlipDirection::Frontflip, FlipDirection::Backflip] {
        let task = jump_task(direction);
        let nlp = build_jump_nlp(&p, &task, &settings()).unwrap();
        let sol = solve_nlp(&nlp, &default_guess(&nlp), &settings().solver).unwrap();
        let audit = audit_jump(&p, &task, &sol);
        assert!(audit.defect <= 1e-6, "{}", audit.defect);
        assert!(audit.path <= 1e-6, "{}", audit.path);
        assert!(audit.final_fz <= 1e-6, "{}", audit.final_fz);
        assert!(audit.momentum <= 1e-4, "{}", audit.momentum);
        assert_eq!(
            sol.states[sol.states.len() - 1].thetadot.signum(),
            direction.sign()
        );
        assert!(sol.max_eq_residual <= 1e-6);
    }
}

#[test]
fn forward_jump_aims_the_ballistic_landing() {
    let p = params();
    let mut task = jump_task(FlipDirection::Frontflip);
    task.forward_distance = Some(1.0);
    let nlp = build_jump_nlp(&p, &task, &settings()).unwrap();
    let sol = solve_nlp(&nlp, &default_guess(&nlp), &settings().solver).unwrap();
    let last = sol.states[sol.states.len() - 1];
    let tf = 2.0 * task.liftoff_zdot / p.gravity;
    let start = sol.states[0].x;
    assert!(((last.x + last.xdot * tf) - start - 1.0).abs() < 1e-6);
}

#[test]
fn landing_from_rest_is_trivial() {
    let p = params();
    let rest = FslipState::standing(&p, 0.8).unwrap();
    let nlp = build_landing_nlp(&p, &rest, rest.z, &settings()).unwrap();
    let sol = solve_nlp(&nlp, &default_guess(&nlp), &settings().solver).unwrap();
    assert!(sol.converged());
    assert!(sol.objective < 1e-6, "{}", sol.objective);
    for s in &sol.states {
        assert!((s.z - rest.z).abs() < 1e-4 && s.zdot.abs() < 1e-4);
    }
}

#[test]
fn landing_after_a_flip_comes_to_rest() {
    let p = params();
    let nlp = landing_nlp(&p);
    let sol = solve_nlp(&nlp, &default_guess(&nlp), &settings().solver).unwrap();
    let last = sol.states[sol.states.len() - 1];
    assert!(last.zdot.abs() < 1e-6 && last.xdot.abs() < 1e-6 && last.thetadot.abs() < 1e-6);
    assert!((last.x - nlp.foot_x).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_off_rate_turns_the_body_through_a_full_flip(
        zdot in 0.5f64..6.0,
        beta in -0.4f64..0.4,
        drop in -0.2f64..1.0,
        back in any::<bool>(),
    ) {
        let dir = if back { FlipDirection::Backflip } else { FlipDirection::Frontflip };
        let g = 9.81;
        prop_assume!(zdot * zdot + 2.0 * g * drop > 0.01);
        let t = lift_off_targets_with_drop(zdot, beta, g, dir, drop).unwrap();
        // Height at T matches the drop.
        let z = zdot * t.flight_time - 0.5 * g * t.flight_time.powi(2);
        prop_assert!((z + drop).abs() < 1e-9);
        prop_assert!((t.pitch_rate * t.flight_time + 2.0 * beta - dir.sign() * 2.0 * PI).abs() < 1e-9);
    }
}
