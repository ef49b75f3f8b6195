mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somersault::flight::{
    average_lower_body_rate, build_flip_reference, closed_loop_rate, closed_loop_rate_derivative,
    flywheel_momentum_target, plan_flight, tuck_profile_derivs, FlightOptions, FlightPlan,
};
use somersault::pipeline::{random_state, run_somersault};
use somersault::robot::{
    centroidal_momentum, virtual_leg, Domain, PlanarRobotModel, SimEventKind, PITCH,
};
use somersault::trajopt::FlipDirection;

/// Composite Simpson rule with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn momentum_splits_into_flywheel_and_lower_body() {
    let m = PlanarRobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let s = random_state(&m, &mut rng, Domain::Flight);
        let cm = centroidal_momentum(&m, &s.q, &s.qd);
        let inertias: Vec<f64> = cm.links.iter().map(|l| l.inertia).collect();
        let rates: Vec<f64> = cm.links.iter().map(|l| l.rate).collect();
        let omega = average_lower_body_rate(&inertias, &rates).unwrap();
        let total: f64 = inertias.iter().sum();
        let split = cm.flywheel_momentum() + omega * total;
        assert!((split - cm.h_pitch).abs() <= 1e-10 * cm.h_pitch.abs().max(1.0));
        let target = flywheel_momentum_target(cm.h_pitch, omega, total).unwrap();
        assert!((target - cm.flywheel_momentum()).abs() <= 1e-10 * cm.h_pitch.abs().max(1.0));
    }
}

fn lift_off_plan(direction: FlipDirection) -> (FlightPlan, somersault::pipeline::RunReport) {
    let mut cfg = common::scenario("frontflip");
    cfg.direction = direction;
    let run = run_somersault(&cfg);
    let m = cfg.model().unwrap();
    let lo = run
        .sim
        .as_ref()
        .unwrap()
        .event(SimEventKind::LiftOff)
        .unwrap()
        .post
        .clone();
    (
        plan_flight(&m, &lo, direction, 0.0, &cfg.flight).unwrap(),
        run.report,
    )
}

#[test]
fn plan_integrates_to_one_turn() {
    for dir in [FlipDirection::Frontflip, FlipDirection::Backflip] {
        let (plan, report) = lift_off_plan(dir);
        let t = plan.flight_time;
        let turned = simpson(|s| plan.omega_bar_des(s), 0.0, t, 200);
        assert!(
            (turned - (dir.sign() * 2.0 * PI - 2.0 * plan.beta_lo)).abs() < 1e-9,
            "{turned}"
        );
        assert!((turned - (plan.theta_des(t) - plan.theta_des(0.0))).abs() < 1e-9);
        // The tuck returns to the lift-off length.
        let breaks = [0.0, 0.3 * t, plan.t1, t];
        let dl: f64 = breaks
            .windows(2)
            .map(|w| simpson(|s| plan.leg_length(s).1, w[0], w[1], 200))
            .sum();
        assert!(dl.abs() < 1e-8, "{dl}");
        // Ballistic flight time against the measured one.
        let measured = report.flight_time.unwrap();
        assert!((measured - t).abs() / t < 0.02, "{measured} vs {t}");
        assert!((report.planned_flight_time.unwrap() - t).abs() < 1e-12);
    }
}

#[test]
fn plan_starts_from_the_measured_lift_off() {
    let cfg = common::scenario("frontflip");
    let run = run_somersault(&cfg);
    let m = cfg.model().unwrap();
    let lo = run
        .sim
        .as_ref()
        .unwrap()
        .event(SimEventKind::LiftOff)
        .unwrap()
        .post
        .clone();
    let plan = plan_flight(
        &m,
        &lo,
        FlipDirection::Frontflip,
        0.0,
        &FlightOptions::default(),
    )
    .unwrap();
    let leg = virtual_leg(&m, &lo.q, &lo.qd);
    let cm = centroidal_momentum(&m, &lo.q, &lo.qd);
    let omega = (cm.h_pitch - cm.flywheel_momentum()) / cm.lower_body_inertia();
    assert!((plan.omega_bar_des(0.0) - omega).abs() < 1e-9);
    assert!((plan.h_pitch - cm.h_pitch).abs() < 1e-12);
    let z = leg.com_velocity[1];
    assert!((plan.flight_time - 2.0 * z / m.gravity).abs() < 1e-12);
    let turns = ((lo.q[PITCH] - leg.angle) / (2.0 * PI)).round();
    assert!((plan.theta_des(0.0) - leg.angle - 2.0 * PI * turns).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tuck_profile_is_bounded_and_smooth(
        t_f in 0.3f64..1.5,
        frac in 0.35f64..0.95,
        l_lo in 0.7f64..0.95,
        depth in 0.01f64..0.2,
        s in 0.0f64..1.0,
    ) {
        let t1 = frac * t_f;
        let l_min = l_lo - depth;
        let t = s * t_f;
        let (l, ld, _) = tuck_profile_derivs(t, t_f, t1, l_lo, l_min).unwrap();
        prop_assert!(l >= l_min - 1e-12 && l <= l_lo + 1e-12);
        let h = 1e-7;
        let (lp, ..) = tuck_profile_derivs((t + h).min(t_f), t_f, t1, l_lo, l_min).unwrap();
        let (lm, ..) = tuck_profile_derivs((t - h).max(0.0), t_f, t1, l_lo, l_min).unwrap();
        let span = (t + h).min(t_f) - (t - h).max(0.0);
        prop_assert!(((lp - lm) / span - ld).abs() < 1e-4 * (1.0 + ld.abs()));
    }

    #[test]
    fn flip_reference_meets_its_boundary_conditions(
        beta in -0.4f64..0.4,
        omega in -15.0f64..15.0,
        t_f in 0.2f64..1.5,
        back in any::<bool>(),
    ) {
        let sign = if back { -1.0 } else { 1.0 };
        let c = build_flip_reference(beta, omega, t_f, sign).unwrap();
        prop_assert!((c.value(0.0) - beta).abs() < 1e-12);
        prop_assert!((c.rate(0.0) - omega).abs() < 1e-12);
        prop_assert!((c.value(t_f) - (sign * 2.0 * PI - beta)).abs() < 1e-9);
        prop_assert!(c.rate(t_f).abs() < 1e-9);
    }

    #[test]
    fn closed_loop_rate_derivative_is_exact(
        pitch0 in -1.0f64..1.0,
        rate in -10.0f64..10.0,
        kp in 0.0f64..30.0,
        s in 0.05f64..0.95,
    ) {
        let mut plan = lift_off_template();
        plan.kp = kp;
        let t = s * plan.flight_time;
        let h = 1e-6;
        let pitch = |tt: f64| pitch0 + rate * tt;
        let fd = (closed_loop_rate(t + h, pitch(t + h), &plan) - closed_loop_rate(t - h, pitch(t - h), &plan)) / (2.0 * h);
        let an = closed_loop_rate_derivative(t, rate, &plan);
        prop_assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()));
    }
}

fn lift_off_template() -> FlightPlan {
    FlightPlan {
        flight_time: 0.85,
        direction: 1.0,
        theta: build_flip_reference(0.15, 8.0, 0.85, 1.0).unwrap(),
        kp: 5.0,
        lower_inertia: 2.0,
        h_pitch: 30.0,
        t1: 0.6,
        leg_length_lo: 0.9,
        tuck_length: 0.65,
        beta_lo: 0.15,
        reevaluate_inertia: false,
    }
}
