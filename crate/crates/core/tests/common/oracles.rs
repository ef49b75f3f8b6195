use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use somersault::flight::FlightPlan;
use somersault::fslip::{ground_reaction, leg_geometry, stance_dynamics, FslipParams};
use somersault::nlp::{Nlp, Triplets};
use somersault::pipeline::{random_input, random_state};
use somersault::robot::{
    accel_affine_map, bias, contact_set, impact_velocity, mass_matrix, poses, simulate,
    spring_torque, standing_state, Domain, PlanarRobotModel, RobotState, SimOptions, SimResult,
    VecU, NQ, PITCH, SPRING, Z,
};
use somersault::trajopt::{default_guess, JumpTask, NlpProblem, NlpSolution, ReferenceBundle};
use somersault::tsc::{
    FlightTarget, Gains, OutputOrder, OutputRow, StanceTarget, TscController, TscMode,
};

use super::{directional_fd, rel_err};

/// Pitch momentum about the COM summed link by link, with link velocities
/// from differenced poses.
pub fn momentum_oracle(m: &PlanarRobotModel, q: &[f64], qd: &[f64]) -> f64 {
    let flat = |x: &[f64]| {
        poses(m, x)
            .iter()
            .flat_map(|p| p.to_vec())
            .collect::<Vec<_>>()
    };
    let p = flat(q);
    let v = directional_fd(flat, q, qd, 1e-6);
    let links = m.links();
    let total: f64 = links.iter().map(|l| l.mass).sum();
    let (mut cx, mut cz, mut vx, mut vz) = (0.0, 0.0, 0.0, 0.0);
    for (i, l) in links.iter().enumerate() {
        cx += l.mass * p[3 * i] / total;
        cz += l.mass * p[3 * i + 1] / total;
        vx += l.mass * v[3 * i] / total;
        vz += l.mass * v[3 * i + 1] / total;
    }
    links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (dx, dz) = (p[3 * i] - cx, p[3 * i + 1] - cz);
            let (dvx, dvz) = (v[3 * i] - vx, v[3 * i + 1] - vz);
            l.mass * (dz * dvx - dx * dvz) + l.inertia * v[3 * i + 2]
        })
        .sum()
}

/// Standing pose, spring unloaded, all bodies moving up at `zdot`: free fall
/// keeps the configuration, so the foot returns after the ballistic time.
/// Returns that time with the simulation.
pub fn held_configuration_flight(zdot: f64, drop: f64) -> (f64, SimResult) {
    let m = PlanarRobotModel::default();
    let mut s = standing_state(&m, 0.8, 0.0).unwrap();
    s.q[SPRING] = 0.0;
    s.q[Z] -= poses(&m, &s.q)[4][1];
    s.qd = [0.0; NQ];
    s.qd[Z] = zdot;
    s.domain = Domain::Flight;
    s.anchor = None;
    let opts = SimOptions {
        t_max: 3.0,
        landing_ground: -drop,
        stop_after_touchdown: Some(0.0),
        ..SimOptions::default()
    };
    let mut zero = |_: &PlanarRobotModel, _: &RobotState| VecU::zeros();
    let sim = simulate(&m, &mut zero, s.clone(), &opts);
    // Foot height above the take-off plane at launch.
    let fall = poses(&m, &s.q)[4][1] + drop;
    let g = m.gravity;
    ((zdot + (zdot * zdot + 2.0 * g * fall).sqrt()) / g, sim)
}

/// Largest gap between the impact solver and angular momentum about the
/// tip for a uniform rod landing on one end.
pub fn falling_rod_error(seed: u64, trials: usize) -> f64 {
    let (mass, len) = (2.0, 1.2);
    let inertia = mass * len * len / 12.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let th: f64 = rng.gen_range(0.2..2.9);
        let pre = DVector::from_vec(vec![
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-4.0..-0.5),
            rng.gen_range(-3.0..3.0),
        ]);
        let mm = DMatrix::from_diagonal(&DVector::from_vec(vec![mass, mass, inertia]));
        let half = 0.5 * len;
        let jac = DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 0.0, half * th.sin(), 0.0, 1.0, -half * th.cos()],
        );
        let post = impact_velocity(&mm, &jac, &pre).unwrap();

        let (rx, rz) = (half * th.cos(), half * th.sin());
        let l_tip = inertia * pre[2] + mass * (rx * pre[1] - rz * pre[0]);
        let w = l_tip / (inertia + mass * half * half);
        let expected = [-w * rz, w * rx, w];
        for i in 0..3 {
            worst = worst.max((post[i] - expected[i]).abs());
        }
    }
    worst
}

/// Post-impact velocity as the KE-closest velocity satisfying the contact.
pub fn impact_oracle(m: &PlanarRobotModel, s: &RobotState) -> DVector<f64> {
    let mm = mass_matrix(m, &s.q);
    let j = contact_set(m, &s.q, &s.qd).jac;
    let mut kkt = DMatrix::zeros(NQ + 3, NQ + 3);
    let mut rhs = DVector::zeros(NQ + 3);
    for r in 0..NQ {
        for c in 0..NQ {
            kkt[(r, c)] = mm[(r, c)];
        }
        for c in 0..3 {
            kkt[(r, NQ + c)] = j[(c, r)];
            kkt[(NQ + c, r)] = j[(c, r)];
        }
    }
    let mv = mm * SVector::<f64, NQ>::from_column_slice(&s.qd);
    for r in 0..NQ {
        rhs[r] = mv[r];
    }
    kkt.lu().solve(&rhs).unwrap().rows(0, NQ).into_owned()
}

/// Contact force from the full saddle-point system
/// M q̈ − Jᵀ F = B u + e_s τ_s − H,  J q̈ = −J̇ q̇.
pub fn saddle_point_force(m: &PlanarRobotModel, s: &RobotState, u: &VecU) -> SVector<f64, 3> {
    let c = contact_set(m, &s.q, &s.qd);
    let mm = mass_matrix(m, &s.q);
    let mut kkt = SMatrix::<f64, 11, 11>::zeros();
    let mut rhs = SVector::<f64, 11>::zeros();
    kkt.fixed_view_mut::<NQ, NQ>(0, 0).copy_from(&mm);
    kkt.fixed_view_mut::<NQ, 3>(0, NQ)
        .copy_from(&(-c.jac.transpose()));
    kkt.fixed_view_mut::<3, NQ>(NQ, 0).copy_from(&c.jac);
    let mut gen = m.actuation() * u - bias(m, &s.q, &s.qd);
    gen[SPRING] += spring_torque(m, &s.q, &s.qd);
    rhs.fixed_rows_mut::<NQ>(0).copy_from(&gen);
    rhs.fixed_rows_mut::<3>(NQ).copy_from(&(-c.jdot_qd));
    kkt.lu()
        .solve(&rhs)
        .unwrap()
        .fixed_rows::<3>(NQ)
        .into_owned()
}

fn dense(rows: usize, t: &Triplets, n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; rows];
    for &(r, c, v) in t {
        m[r][c] += v;
    }
    m
}

fn apply(m: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(d).map(|(a, b)| a * b).sum())
        .collect()
}

/// A point near the default guess with every variable perturbed.
fn random_point(nlp: &NlpProblem, rng: &mut impl Rng) -> Vec<f64> {
    let scale = nlp.scale();
    let mut x = default_guess(nlp);
    for (xi, s) in x.iter_mut().zip(&scale) {
        *xi += 0.05 * s * rng.gen_range(-1.0..1.0);
    }
    x
}

/// Worst relative error of the gradient, both Jacobians and the Lagrangian
/// Hessian against central differences along random directions.
pub fn nlp_derivative_error(nlp: &NlpProblem, seed: u64, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nlp.num_vars();
    let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
    let scale = nlp.scale();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = random_point(nlp, &mut rng);
        let dir: Vec<f64> = scale.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect();

        let g = nlp.gradient(&x);
        let fd = directional_fd(|y| vec![nlp.objective(y)], &x, &dir, h)[0];
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(an, fd));

        let (je, ji) = nlp.jacobians(&x);
        let (je, ji) = (dense(me, &je, n), dense(mi, &ji, n));
        let fd_e = directional_fd(|y| nlp.constraints(y).0, &x, &dir, h);
        let fd_i = directional_fd(|y| nlp.constraints(y).1, &x, &dir, h);
        for (a, b) in apply(&je, &dir)
            .iter()
            .zip(&fd_e)
            .chain(apply(&ji, &dir).iter().zip(&fd_i))
        {
            worst = worst.max(rel_err(*a, *b));
        }

        // Lagrangian Hessian against differenced Lagrangian gradients.
        let lam: Vec<f64> = (0..me).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..mi).map(|_| rng.gen_range(0.0..1.0)).collect();
        if let Some(hess) = nlp.hessian(&x, 1.0, &lam, &mu) {
            let mut full = vec![vec![0.0; n]; n];
            for &(r, c, v) in &hess {
                full[r][c] += v;
                if r != c {
                    full[c][r] += v;
                }
            }
            let grad_l = |y: &[f64]| {
                let mut gl = nlp.gradient(y);
                let (je, ji) = nlp.jacobians(y);
                for &(r, c, v) in &je {
                    gl[c] += lam[r] * v;
                }
                for &(r, c, v) in &ji {
                    gl[c] += mu[r] * v;
                }
                gl
            };
            let fd_h = directional_fd(grad_l, &x, &dir, h);
            for (a, b) in apply(&full, &dir).iter().zip(&fd_h) {
                worst = worst.max(rel_err(*a, *b));
            }
        }
    }
    worst
}

pub struct JumpAudit {
    /// Trapezoid defects and the lift-off vertical speed.
    pub defect: f64,
    /// Worst of −F_z, friction and ZMP excess over all nodes.
    pub path: f64,
    pub final_fz: f64,
    /// Relative lift-off momentum error against the ballistic target.
    pub momentum: f64,
}

/// Trapezoid defects, path rows and the lift-off conditions rebuilt from
/// the template dynamics alone.
pub fn audit_jump(p: &FslipParams, task: &JumpTask, sol: &NlpSolution) -> JumpAudit {
    let n = sol.states.len();
    let dt = sol.duration / (n - 1) as f64;
    let mut defect: f64 = 0.0;
    for k in 0..n - 1 {
        let (a, b) = (sol.states[k].to_array(), sol.states[k + 1].to_array());
        let fa = stance_dynamics(&sol.states[k], &sol.controls[k], p).unwrap();
        let fb = stance_dynamics(&sol.states[k + 1], &sol.controls[k + 1], p).unwrap();
        for i in 0..8 {
            defect = defect.max((b[i] - a[i] - 0.5 * dt * (fa[i] + fb[i])).abs());
        }
    }
    let mut path: f64 = 0.0;
    for (s, c) in sol.states.iter().zip(&sol.controls) {
        let f = ground_reaction(s, c, p).unwrap();
        path = path
            .max(-f.fz)
            .max(f.fx.abs() - p.friction_mu * f.fz)
            .max(c.foot_moment.abs() - 0.5 * p.foot_length * f.fz);
    }
    let last = sol.states[n - 1];
    let final_fz = ground_reaction(&last, &sol.controls[n - 1], p)
        .unwrap()
        .fz
        .abs();
    let g = p.gravity;
    let tf =
        (task.liftoff_zdot + (task.liftoff_zdot.powi(2) + 2.0 * g * task.landing_drop).sqrt()) / g;
    let beta = leg_geometry(&last).unwrap().beta;
    let target = (task.direction.sign() * 2.0 * PI - 2.0 * beta) / tf;
    let inertia = p.inertia(last.leg_length).unwrap();
    let momentum = (inertia * last.thetadot - inertia * target).abs() / (inertia * target).abs();
    defect = defect.max((last.zdot - task.liftoff_zdot).abs());
    JumpAudit {
        defect,
        path,
        final_fz,
        momentum,
    }
}

fn shifted(s: &RobotState, qdd: &[f64], h: f64) -> RobotState {
    let mut out = s.clone();
    for i in 0..NQ {
        out.q[i] += h * s.qd[i] + 0.5 * h * h * qdd[i];
        out.qd[i] += h * qdd[i];
    }
    out.time += h;
    out
}

/// Worst relative mismatch between each row's model and the differenced
/// row along a path with acceleration `qdd`.
pub fn output_map_error(
    m: &PlanarRobotModel,
    tsc: &TscController,
    s: &RobotState,
    qdd: &[f64],
) -> f64 {
    // Along high-acceleration paths the O(h²) truncation dominates at 1e-5.
    let h = 1e-6;
    let rows = |st: &RobotState| -> Vec<OutputRow> { tsc.problem(m, st).unwrap().1 };
    let (r0, rp, rm) = (
        rows(s),
        rows(&shifted(s, qdd, h)),
        rows(&shifted(s, qdd, -h)),
    );
    assert_eq!(rp.len(), r0.len());
    let qdd_v = SVector::<f64, NQ>::from_column_slice(qdd);
    let mut worst: f64 = 0.0;
    for ((r, p), mm) in r0.iter().zip(&rp).zip(&rm) {
        let second = (r.jac * qdd_v)[0] + r.drift;
        let d_value = (p.value - mm.value) / (2.0 * h);
        let err = match r.order {
            OutputOrder::Momentum => rel_err(second, d_value),
            OutputOrder::Position => {
                let d_rate = (p.rate - mm.rate) / (2.0 * h);
                rel_err(r.rate, d_value).max(rel_err(second, d_rate))
            }
        };
        worst = worst.max(err);
    }
    worst
}

/// Output-map error over `points` states, alternating between jump stance
/// rows with random accelerations and flight rows with physical ones.
pub fn output_maps_error(
    m: &PlanarRobotModel,
    gains: Gains,
    reference: &ReferenceBundle,
    plan: &FlightPlan,
    lift_off: &RobotState,
    seed: u64,
    points: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let mut qdd: Vec<f64> = (0..NQ).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let (tsc, s) = if k % 2 == 0 {
            let mut s = random_state(m, &mut rng, Domain::Jumping);
            // Inside a knot interval: the reference acceleration jumps at knots.
            let i = rng.gen_range(1..reference.times.len() - 2);
            let (a, b) = (reference.times[i], reference.times[i + 1]);
            s.time = a + rng.gen_range(0.05..0.95) * (b - a);
            let tsc = TscController::new(
                gains,
                TscMode::Stance(StanceTarget {
                    reference: reference.clone(),
                    start: 0.0,
                    pitch_offset: 0.0,
                }),
            );
            (tsc, s)
        } else {
            let mut plan = plan.clone();
            plan.reevaluate_inertia = k % 3 == 0;
            let target = FlightTarget::new(m, plan.clone(), lift_off);
            let mut s = random_state(m, &mut rng, Domain::Flight);
            // The momentum row assumes free flight, where H is conserved.
            let accel = accel_affine_map(m, &s.q, &s.qd, None).unwrap();
            qdd = (accel.a * random_input(m, &mut rng) + accel.b)
                .as_slice()
                .to_vec();
            s.q[PITCH] = lift_off.q[PITCH] + rng.gen_range(0.0..6.0);
            // Stay clear of the tuck breakpoints, where the leg acceleration jumps.
            let breaks = [0.0, 0.3 * plan.flight_time, plan.t1, plan.flight_time];
            let j = rng.gen_range(0..3);
            let tau = breaks[j] + rng.gen_range(0.02..0.98) * (breaks[j + 1] - breaks[j]);
            s.time = lift_off.time + tau;
            (TscController::new(gains, TscMode::Flight(target)), s)
        };
        worst = worst.max(output_map_error(m, &tsc, &s, &qdd));
    }
    worst
}
