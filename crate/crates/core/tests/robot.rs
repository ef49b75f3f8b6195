mod common;

use nalgebra::SVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somersault::pipeline::{random_input, random_state, RandomTorques};
use somersault::robot::{
    centroidal_momentum, constrained_dynamics, contact_set, grf_affine_map, impact_map,
    kinetic_energy, mass_matrix, simulate, Domain, PlanarRobotModel, SimEventKind, SimOptions,
    SimOutcome, FLYWHEEL, NQ, Z,
};

use common::oracles::{
    falling_rod_error, held_configuration_flight, impact_oracle, momentum_oracle,
    saddle_point_force,
};

fn model() -> PlanarRobotModel {
    PlanarRobotModel::default()
}

#[test]
fn centroidal_momentum_matches_link_sum() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s = random_state(&m, &mut rng, Domain::Flight);
        let h = centroidal_momentum(&m, &s.q, &s.qd).h_pitch;
        let oracle = momentum_oracle(&m, &s.q, &s.qd);
        assert!(
            (h - oracle).abs() <= 1e-6 * oracle.abs().max(1.0),
            "{h} vs {oracle}"
        );
    }
}

#[test]
fn flight_conserves_pitch_momentum_under_random_torques() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut start = random_state(&m, &mut rng, Domain::Flight);
    start.q[Z] += 5.0;
    let mut ctrl = RandomTorques::new(&m, &mut rng, &start, 10, 0.1);
    let opts = SimOptions {
        t_max: 1.0,
        landing_ground: -1e6,
        ..SimOptions::default()
    };
    let sim = simulate(&m, &mut ctrl, start, &opts);
    assert_eq!(sim.outcome, SimOutcome::Completed);
    let h0 = momentum_oracle(&m, &sim.samples[0].q, &sim.samples[0].qd);
    let f = &sim.final_state;
    let h1 = momentum_oracle(&m, &f.q, &f.qd);
    assert!((h1 - h0).abs() <= 1e-6 * h0.abs().max(1.0), "{h0} -> {h1}");
    let moved = (sim.samples[0].q[FLYWHEEL] - f.q[FLYWHEEL]).abs();
    assert!(moved > 0.1, "torques should move the joints");
    for s in &sim.samples {
        assert!((s.h_pitch - sim.samples[0].h_pitch).abs() <= 1e-8 * h0.abs().max(1.0));
    }
}

#[test]
fn held_configuration_flight_time_is_ballistic() {
    for (zdot, drop) in [(3.0, 0.0), (4.2, 0.5), (2.0, -0.1)] {
        let (expected, sim) = held_configuration_flight(zdot, drop);
        let td = sim.event(SimEventKind::TouchDown).expect("lands");
        assert!(
            (td.time - expected).abs() < 1e-6,
            "{} vs {expected}",
            td.time
        );
    }
}

#[test]
fn touchdown_is_bracketed_tightly() {
    let (_, sim) = held_configuration_flight(3.0, 0.0);
    let td = sim.event(SimEventKind::TouchDown).unwrap();
    assert!(td.bracket[0] <= td.time && td.time <= td.bracket[1]);
    assert!(td.bracket[1] - td.bracket[0] <= SimOptions::default().event_tol);
    assert!(td.guard[0] >= 0.0 && td.guard[1] < 0.0);
    assert_eq!(td.post.domain, Domain::Landing);
}

#[test]
fn simulation_is_deterministic() {
    let (_, a) = held_configuration_flight(3.0, 0.2);
    let (_, b) = held_configuration_flight(3.0, 0.2);
    assert_eq!(a, b);
}

#[test]
fn falling_rod_impact_matches_angular_momentum_about_the_tip() {
    let err = falling_rod_error(3, 100);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn robot_impact_removes_contact_velocity_and_never_adds_energy() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let pre = random_state(&m, &mut rng, Domain::Flight);
        let post = impact_map(&m, &pre).unwrap();
        let j = contact_set(&m, &post.q, &post.qd).jac;
        let v = j * SVector::<f64, NQ>::from_column_slice(&post.qd);
        assert!(v.amax() <= 1e-10, "{v}");
        let (ke0, ke1) = (
            kinetic_energy(&m, &pre.q, &pre.qd),
            kinetic_energy(&m, &post.q, &post.qd),
        );
        assert!(ke1 <= ke0 * (1.0 + 1e-12), "{ke0} -> {ke1}");
        let oracle = impact_oracle(&m, &pre);
        for i in 0..NQ {
            assert!((post.qd[i] - oracle[i]).abs() <= 1e-9 * (1.0 + oracle.amax()));
        }
        assert_eq!(post.q, pre.q);
    }
}

#[test]
fn ground_force_elimination_matches_saddle_point_solve() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let s = random_state(&m, &mut rng, Domain::Landing);
        let u = random_input(&m, &mut rng);
        let c = contact_set(&m, &s.q, &s.qd);
        let map = grf_affine_map(&m, &s.q, &s.qd, &c).unwrap();
        let f_map = map.a * u + map.b;

        let (_, f_dyn) = constrained_dynamics(&m, &s.q, &s.qd, &u, &c).unwrap();
        let oracle = saddle_point_force(&m, &s, &u);
        let scale = f_dyn.amax().max(1.0);
        for i in 0..3 {
            assert!((f_map[i] - f_dyn[i]).abs() <= 1e-10 * scale);
            assert!((f_map[i] - oracle[i]).abs() <= 1e-9 * scale);
        }
    }
}

proptest! {
    #[test]
    fn mass_matrix_is_symmetric_positive_definite(seed in any::<u64>()) {
        let m = model();
        let s = random_state(&m, &mut ChaCha8Rng::seed_from_u64(seed), Domain::Flight);
        let mm = mass_matrix(&m, &s.q);
        prop_assert!((mm - mm.transpose()).amax() == 0.0);
        prop_assert!(mm.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn impact_is_idempotent(seed in any::<u64>()) {
        let m = model();
        let pre = random_state(&m, &mut ChaCha8Rng::seed_from_u64(seed), Domain::Flight);
        let once = impact_map(&m, &pre).unwrap();
        let twice = impact_map(&m, &once).unwrap();
        for i in 0..NQ {
            prop_assert!((once.qd[i] - twice.qd[i]).abs() <= 1e-10 * (1.0 + once.qd[i].abs()));
        }
    }

    #[test]
    fn kinetic_energy_is_nonnegative(seed in any::<u64>()) {
        let m = model();
        let s = random_state(&m, &mut ChaCha8Rng::seed_from_u64(seed), Domain::Flight);
        prop_assert!(kinetic_energy(&m, &s.q, &s.qd) >= 0.0);
    }
}
