use std::fs;
use std::path::Path;

use handsim::grasp::{GraspLibrary, Phase, DOA};
use handsim::harness::console::run_script;
use handsim::harness::{
    payload_hold_test, run_experiment, speed_test, EventKind, ExperimentResult, HandConfig, HandSim, ObjectSpec,
    Scenario,
};
use handsim::plant::sizing_payload_limit;
use handsim::protocol::{encode_frame, parse_console};

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/scenarios").join(name);
    Scenario::from_toml(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run(sc: &Scenario) -> ExperimentResult {
    run_experiment(sc, &HandConfig::default(), &GraspLibrary::builtin()).unwrap()
}

fn frame_bytes(r: &ExperimentResult) -> Vec<u8> {
    r.log.frames.iter().flat_map(encode_frame).collect()
}

#[test]
fn shipped_scenarios_meet_their_expectations() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let sc = Scenario::from_toml(&fs::read_to_string(&path).unwrap()).unwrap();
        let r = run(&sc);
        let failures = r.check(&sc.expect);
        assert!(failures.is_empty(), "{}: {failures:?}", path.display());
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn identical_runs_give_identical_logs() {
    let sc = scenario("power_drill.toml");
    let (a, b) = (run(&sc), run(&sc));
    assert_eq!(frame_bytes(&a), frame_bytes(&b));
    assert_eq!(a.log.events, b.log.events);
    assert_eq!(a.log.phases, b.log.phases);
    assert_eq!(a.log.commands, b.log.commands);
    assert_eq!(a.summary, b.summary);
}

#[test]
fn phases_tile_the_log() {
    for name in ["power_drill.toml", "oversized_ball.toml", "out_of_reach.toml"] {
        let r = run(&scenario(name));
        let phases = &r.log.phases;
        assert_eq!(phases[0].start_tick, 0);
        for w in phases.windows(2) {
            assert_eq!(w[0].end_tick, w[1].start_tick);
        }
        let total: u64 = phases.iter().map(|p| p.end_tick - p.start_tick).sum();
        assert!(total.abs_diff(r.log.duration_ticks()) <= 1000, "{name}");
        let expected_frames = r.log.duration_ticks() / 1000;
        assert_eq!(r.log.frames.len() as u64, expected_frames, "{name}");
    }
}

#[test]
fn console_script_reproduces_batch_run() {
    let sc = scenario("power_drill.toml");
    let batch = run(&sc);
    let mut script = String::new();
    for (t, line) in &batch.log.commands {
        assert!(parse_console(line).is_ok(), "{line}");
        script.push_str(&format!("@{t} {line}\n"));
    }
    let end_ms = batch.log.duration_ticks() / 10;
    script.push_str(&format!("@{end_ms}\n"));

    let mut hand = HandSim::new(HandConfig::default(), GraspLibrary::builtin()).unwrap();
    hand.place_object(&sc.object).unwrap();
    let mut out = Vec::new();
    run_script(&mut hand, &script, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(!text.contains("error"), "{text}");
    assert!(hand.ticks.abs_diff(batch.log.duration_ticks()) <= 1);
    assert_eq!(hand.log.frames.len(), batch.log.frames.len());
    let count = hand.log.frames.len();
    let replay: Vec<u8> = hand.log.frames.iter().flat_map(encode_frame).collect();
    assert_eq!(replay, frame_bytes(&batch), "{count} frames");
}

#[test]
fn empty_handle_passes() {
    let r = payload_hold_test(&HandConfig::default(), &GraspLibrary::builtin(), 0.0).unwrap();
    assert!(r.pass, "{:?}", r.result.summary);
}

#[test]
fn payload_beyond_sizing_limit_stalls_and_fails() {
    let cfg = HandConfig::default();
    let limit = sizing_payload_limit(cfg.sizing_lever, 20.0, 107.0);
    let r = payload_hold_test(&cfg, &GraspLibrary::builtin(), limit * 1.05).unwrap();
    assert!(!r.pass);
    assert!(r.result.log.events.iter().any(|e| matches!(e.kind, EventKind::Stall { torque, rated, .. } if torque > rated)));
}

#[test]
fn dropped_ball_leaves_no_force() {
    let r = run(&scenario("oversized_ball.toml"));
    let drop = r.log.events.iter().find(|e| e.kind == EventKind::ObjectDropped).expect("ball drops");
    let mv = r.log.phases.iter().find(|p| p.name == "move").unwrap();
    assert!(drop.tick >= mv.start_tick && drop.tick <= mv.end_tick, "{drop:?} outside {mv:?}");
    let settled = drop.tick / 10 + 500;
    let late: Vec<_> = r.log.frames.iter().filter(|f| f.t_ms as u64 > settled).collect();
    assert!(!late.is_empty());
    for f in late {
        for x in &f.fingers {
            assert!(x.force.abs() < 0.02, "{} ms: {}", f.t_ms, x.force);
        }
    }
}

#[test]
fn unreachable_object_fails_during_grasp() {
    let r = run(&scenario("out_of_reach.toml"));
    let grasp = &r.log.phases[0];
    let e = r.log.events.iter().find(|e| matches!(e.kind, EventKind::GraspFailed(_))).unwrap();
    assert!(e.tick <= grasp.end_tick);
}

#[test]
fn closing_time_falls_with_speed_and_opening_is_faster() {
    let factors: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let rows = speed_test(&HandConfig::default(), &GraspLibrary::builtin(), &factors).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].closing <= w[0].closing, "{rows:?}");
    }
    for r in &rows {
        assert!(r.opening <= r.closing, "{r:?}");
    }
}

const TEST_GRASPS: &str = r#"
[[grasp]]
name = "Split"
prep_deg = [0, 0, 0, 0, 0, 0]
target_deg = [0, 0, 60, 60, 0, 0]
speed_factor = [1, 1, 1, 0.5, 1, 1]

[[grasp]]
name = "Press"
prep_deg = [0, 0, 0, 0, 0, 0]
target_deg = [0, 0, 90, 30, 0, 0]
speed_factor = [1, 1, 1, 1, 1, 1]
"#;

#[test]
fn half_speed_finger_takes_twice_as_long() {
    let lib = GraspLibrary::from_toml(TEST_GRASPS).unwrap();
    let mut hand = HandSim::new(HandConfig::default(), lib).unwrap();
    hand.apply(&parse_console("grasp split").unwrap()).unwrap();
    assert!(hand.run_until(60.0, |h| h.session.phase == Phase::Closing));
    let start = hand.ticks;
    let mut fast = None;
    assert!(hand.run_until(60.0, |h| {
        if h.session.done[2] && fast.is_none() {
            fast = Some(h.ticks - start);
        }
        h.session.done[3]
    }));
    let (fast, slow) = (fast.unwrap() as f64, (hand.ticks - start) as f64);
    assert!((slow / fast - 2.0).abs() < 0.1, "{fast} vs {slow} ticks");
}

#[test]
fn blocked_finger_sits_at_current_limit_while_others_finish() {
    let lib = GraspLibrary::from_toml(TEST_GRASPS).unwrap();
    let cfg = HandConfig::default();
    let mut hand = HandSim::new(cfg.clone(), lib).unwrap();
    hand.place_object(&ObjectSpec { stiffness: 500.0, ..ObjectSpec::new("block", 40.0, 0.1) }).unwrap();
    hand.apply(&parse_console("grasp press").unwrap()).unwrap();
    assert!(hand.run_until(60.0, |h| h.session.phase == Phase::Closing && h.session.done[3]));
    hand.run_for(3.0);
    assert!(hand.all_closing_fingers_stalled());
    assert_eq!(hand.session.done.iter().filter(|d| !**d).count(), 1);
    let i = hand.servos[2].motor.current.abs();
    let i_lim = cfg.controller(2).i_lim;
    assert!((i - i_lim).abs() < 0.1 * i_lim, "{i} A");
    for slot in (0..DOA).filter(|s| *s != 2) {
        assert_eq!(hand.servos[slot].motor.current, 0.0);
    }
}
