#![allow(dead_code)]

use handsim::control::{scheduler_step, ControlMode, ControllerConfig, ControllerState, Measurement};
use handsim::kinematics::{LinkageGeometry, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Joint C by brute force: walk the coupler circle around B, bracket every
/// zero of |C - D| - cd and bisect it, then keep the root on the palmar side
/// of B -> D.
pub fn fourbar_oracle(geom: &LinkageGeometry, theta: f64) -> Option<Vec2> {
    const SCAN: usize = 20_000;
    let b = Vec2::new(geom.len_ab * theta.cos(), geom.len_ab * theta.sin());
    let g = geom.ground_angle.to_radians();
    let d = Vec2::new(geom.len_ad * g.cos(), geom.len_ad * g.sin());
    let point = |phi: f64| b + Vec2::new(phi.cos(), phi.sin()) * geom.len_bc;
    let gap = |phi: f64| (point(phi) - d).norm() - geom.len_cd_rest;
    let step = std::f64::consts::TAU / SCAN as f64;
    let mut roots = Vec::new();
    for k in 0..SCAN {
        let (mut lo, mut hi) = (k as f64 * step, (k + 1) as f64 * step);
        let (glo, ghi) = (gap(lo), gap(hi));
        if glo == 0.0 {
            roots.push(lo);
            continue;
        }
        if glo * ghi > 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if gap(mid) * glo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    let bd = d - b;
    roots.into_iter().map(point).find(|c| {
        let bc = c - b;
        bd.x * bc.y - bd.y * bc.x < 0.0
    })
}

/// Defaults with every length scaled by up to +-25 % and the pivot and
/// offset angles moved by up to +-25 degrees.
pub fn random_geometry(rng: &mut ChaCha8Rng) -> LinkageGeometry {
    let d = LinkageGeometry::default();
    let mut s = |v: f64| v * rng.random_range(0.75..1.25);
    let mut g = LinkageGeometry {
        len_ab: s(d.len_ab),
        len_bc: s(d.len_bc),
        len_ad: s(d.len_ad),
        len_cd_rest: s(d.len_cd_rest),
        len_mp: s(d.len_mp),
        len_dp: s(d.len_dp),
        ..d.clone()
    };
    g.ground_angle += rng.random_range(-25.0..25.0);
    g.coupler_offset += rng.random_range(-25.0..25.0);
    g.dip_angle = rng.random_range(0.0..40.0);
    g.theta_max = rng.random_range(30.0..90.0);
    g
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn random_controller(rng: &mut ChaCha8Rng) -> ControllerConfig {
    let rate_outer = [100.0, 500.0, 1000.0, 2000.0][rng.random_range(0..4)];
    let ratio = [1.0, 2.0, 5.0, 10.0][rng.random_range(0..4)];
    let mut alpha = || rng.random_range(1e-3..=1.0);
    let (a, b, c, d) = (alpha(), alpha(), alpha(), alpha());
    ControllerConfig {
        kp_pos: log_uniform(rng, 1e-2, 1e3),
        kp_vel: log_uniform(rng, 1e-4, 1e2),
        ki_vel: if rng.random_bool(0.1) { 0.0 } else { log_uniform(rng, 1e-2, 1e4) },
        kd_vel: if rng.random_bool(0.3) { 0.0 } else { log_uniform(rng, 1e-6, 1.0) },
        kp_cur: log_uniform(rng, 1e-2, 1e2),
        ki_cur: log_uniform(rng, 1.0, 1e6),
        omega_lim: log_uniform(rng, 1e-2, 1e2),
        i_lim: log_uniform(rng, 1e-3, 10.0),
        u_lim: log_uniform(rng, 0.1, 48.0),
        rate_outer,
        rate_inner: rate_outer * ratio,
        ema_u_alpha: a,
        ema_i_alpha: b,
        d_filter_alpha: c,
        omega_filter_alpha: d,
        mode: [ControlMode::Position, ControlMode::Velocity, ControlMode::Current][rng.random_range(0..3)],
    }
}

/// Random measurement stream: a wandering encoder angle, a current sense
/// with spikes and, sometimes, an external velocity.
pub fn random_measurements(rng: &mut ChaCha8Rng, n: usize) -> Vec<Measurement> {
    let external = rng.random_bool(0.3);
    let mut theta = rng.random_range(-2.0..2.0);
    (0..n)
        .map(|_| {
            theta += rng.random_range(-0.05..0.05);
            let spike = rng.random_bool(0.01);
            Measurement {
                theta_raw: theta,
                omega_raw: external.then(|| rng.random_range(-50.0..50.0)),
                i_raw_abs: if spike { rng.random_range(0.0..100.0) } else { rng.random_range(0.0..2.0) },
            }
        })
        .collect()
}

pub const FUZZ_TICKS: usize = 200;

/// u_set of every tick, plus the first violated invariant.
fn run_trace(
    cfg: &ControllerConfig,
    st: &mut ControllerState,
    meas: &[Measurement],
    mut inject: impl FnMut(u64, &mut ControllerState),
    mut omega_trace: Option<&mut Vec<f64>>,
) -> Result<Vec<f64>, String> {
    let dt = cfg.dt_inner();
    let ratio = cfg.rate_ratio();
    let mut out = Vec::with_capacity(meas.len());
    for (k, m) in meas.iter().enumerate() {
        if st.tick.is_multiple_of(ratio) {
            inject(st.tick / ratio, st);
        }
        let outer = st.tick.is_multiple_of(ratio);
        let u = scheduler_step(cfg, st, m, dt);
        if outer {
            if let Some(tr) = omega_trace.as_deref_mut() {
                tr.push(st.omega_set);
            }
        }
        if !(u.abs() <= cfg.u_lim) {
            return Err(format!("tick {k}: |u_set| = {u} > {}", cfg.u_lim));
        }
        if !(st.i_set.abs() <= cfg.i_lim) {
            return Err(format!("tick {k}: |i_set| = {} > {}", st.i_set, cfg.i_lim));
        }
        if cfg.mode == ControlMode::Position && !(st.omega_set.abs() <= cfg.omega_lim) {
            return Err(format!("tick {k}: |omega_set| = {} > {}", st.omega_set, cfg.omega_lim));
        }
        if cfg.ki_vel > 0.0 && !(st.integ_vel.abs() <= cfg.i_lim / cfg.ki_vel * (1.0 + 1e-12)) {
            return Err(format!("tick {k}: velocity integral {} beyond i_lim/ki", st.integ_vel));
        }
        if cfg.ki_cur > 0.0 && !(st.integ_cur.abs() <= cfg.u_lim / cfg.ki_cur * (1.0 + 1e-12)) {
            return Err(format!("tick {k}: current integral {} beyond u_lim/ki", st.integ_cur));
        }
        out.push(u);
    }
    Ok(out)
}

/// Checks saturation, integral bounds, determinism and, for position mode,
/// bit-identity with velocity mode fed the same speed setpoints.
pub fn check_controller_case(case_seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let cfg = random_controller(&mut rng);
    cfg.validate().map_err(|e| format!("generator produced invalid config: {e}"))?;
    let meas = random_measurements(&mut rng, FUZZ_TICKS);
    let theta_set = rng.random_range(-2.0..2.0);
    let i_set = rng.random_range(-1.0..1.0) * cfg.i_lim;
    let omega_inj: Vec<f64> = (0..FUZZ_TICKS).map(|_| rng.random_range(-1.0..1.0) * cfg.omega_lim).collect();

    let fresh = || ControllerState { theta_set, i_set, ..Default::default() };
    let inject = |k: u64, st: &mut ControllerState| {
        if cfg.mode == ControlMode::Velocity {
            st.omega_set = omega_inj[k as usize];
        }
    };
    let mut omega_trace = Vec::new();
    let a = run_trace(&cfg, &mut fresh(), &meas, inject, Some(&mut omega_trace))
        .map_err(|e| format!("seed {case_seed}: {e}"))?;
    let b = run_trace(&cfg, &mut fresh(), &meas, inject, None).map_err(|e| format!("seed {case_seed}: {e}"))?;
    if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err(format!("seed {case_seed}: two runs differ"));
    }

    if cfg.mode == ControlMode::Position {
        let vel = ControllerConfig { mode: ControlMode::Velocity, ..cfg.clone() };
        let c = run_trace(&vel, &mut fresh(), &meas, |k, st| st.omega_set = omega_trace[k as usize], None)
            .map_err(|e| format!("seed {case_seed} (velocity replay): {e}"))?;
        if let Some(k) = a.iter().zip(&c).position(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("seed {case_seed}: velocity replay differs at tick {k}"));
        }
    }
    Ok(())
}

pub fn golden_session_output() -> Vec<u8> {
    use handsim::grasp::GraspLibrary;
    use handsim::harness::{console::run_script, HandConfig, HandSim, ObjectSpec};
    let mut hand = HandSim::new(HandConfig::default(), GraspLibrary::builtin()).unwrap();
    hand.place_object(&ObjectSpec::new("drill", 25.0, 0.9)).unwrap();
    let script = include_str!("../../configs/session.txt");
    let mut out = Vec::new();
    run_script(&mut hand, script, &mut out).unwrap();
    out
}
