use std::f64::consts::FRAC_PI_2;

use handsim::grasp::{GraspEvent, GraspLibrary, GraspSession, MotorCommand, Phase, SlotMeasurement, DOA};
use proptest::prelude::*;

const TOL: f64 = 1e-3;
const LIMITS: [(f64, f64); DOA] = [(0.0, FRAC_PI_2); DOA];

#[derive(Debug, Clone)]
enum Ev {
    Start { grasp: usize, speed: f64, corrupt: bool },
    /// Every slot at its commanded position, except those in the mask.
    TickAtGoal { miss_mask: u8 },
    TickRandom([f64; DOA]),
    Stop,
    Release,
}

fn event() -> impl Strategy<Value = Ev> {
    prop_oneof![
        1 => (0usize..7, prop_oneof![0.05f64..=1.0, Just(0.0), Just(1.5), Just(f64::NAN), Just(-0.3)], prop::bool::weighted(0.2))
            .prop_map(|(grasp, speed, corrupt)| Ev::Start { grasp, speed, corrupt }),
        4 => (prop_oneof![3 => Just(0u8), 1 => any::<u8>()]).prop_map(|miss_mask| Ev::TickAtGoal { miss_mask }),
        1 => prop::array::uniform6(-0.5f64..2.0).prop_map(Ev::TickRandom),
        1 => Just(Ev::Stop),
        1 => Just(Ev::Release),
    ]
}

fn legal(from: Phase, to: Phase) -> bool {
    use Phase::*;
    from == to
        || matches!(
            (from, to),
            (Idle, MovingToPrep)
                | (MovingToPrep, ReadyToClose)
                | (ReadyToClose, Closing)
                | (Closing, Holding | Stopped)
                | (Holding | Stopped, Releasing)
                | (Releasing, Idle)
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn fuzzed_event_sequences_stay_legal(events in prop::collection::vec(event(), 1..120)) {
        let lib = GraspLibrary::builtin();
        let names = lib.names().iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut s = GraspSession::new(0.4, [TOL; DOA], LIMITS);
        let mut powered = [false; DOA];
        let mut commanded = [0.0f64; DOA];
        for ev in events {
            let before = s.phase;
            let mut meas = [SlotMeasurement::default(); DOA];
            let input = match ev {
                Ev::Start { grasp, speed, corrupt } => {
                    let mut g = lib.get(&names[grasp % names.len()]).unwrap();
                    if corrupt {
                        g.target_position[3] = 2.5;
                    }
                    GraspEvent::Start(g, speed)
                }
                Ev::TickAtGoal { miss_mask } => {
                    for slot in 0..DOA {
                        let off = if miss_mask & (1 << slot) != 0 { 0.1 } else { 0.0 };
                        meas[slot].theta_raw = commanded[slot] + off;
                    }
                    GraspEvent::Tick(meas)
                }
                Ev::TickRandom(th) => {
                    for slot in 0..DOA {
                        meas[slot].theta_raw = th[slot];
                    }
                    GraspEvent::Tick(meas)
                }
                Ev::Stop => GraspEvent::Stop,
                Ev::Release => GraspEvent::Release,
            };
            let is_tick = matches!(input, GraspEvent::Tick(_));
            match s.handle(input) {
                Ok(cmds) => {
                    for c in cmds {
                        match c {
                            MotorCommand::Drive { slot, theta_set, omega_lim } => {
                                prop_assert!(omega_lim > 0.0 && omega_lim <= 0.4);
                                prop_assert!(theta_set >= LIMITS[slot].0 && theta_set <= LIMITS[slot].1);
                                powered[slot] = true;
                                commanded[slot] = theta_set;
                            }
                            MotorCommand::PowerOff { slot } => {
                                if is_tick {
                                    prop_assert!((meas[slot].theta_raw - commanded[slot]).abs() < TOL);
                                }
                                powered[slot] = false;
                            }
                        }
                    }
                }
                Err(_) => prop_assert_eq!(s.phase, before),
            }
            prop_assert!(legal(before, s.phase), "{:?} -> {:?}", before, s.phase);
            if s.is_holding() {
                prop_assert!(powered.iter().all(|p| !p), "powered while {:?}", s.phase);
                prop_assert!(s.done.iter().all(|d| *d));
            }
            if s.phase == Phase::Idle {
                prop_assert!(s.active_grasp.is_none());
            }
        }
    }
}

#[test]
fn every_phase_event_pair_is_defined() {
    let lib = GraspLibrary::builtin();
    let g = lib.get("Tripod").unwrap();
    let reach = |target: Phase| -> GraspSession {
        let mut s = GraspSession::new(0.4, [TOL; DOA], LIMITS);
        let mut guard = 0;
        while s.phase != target {
            guard += 1;
            assert!(guard < 20, "cannot reach {target:?}");
            let goal = match s.phase {
                Phase::MovingToPrep => g.prep_position,
                Phase::Closing => g.target_position,
                _ => [0.0; DOA],
            };
            let r = match (s.phase, target) {
                (Phase::Idle, _) => s.start_grasp(g.clone(), 1.0),
                (Phase::Closing, Phase::Stopped) => s.manual_stop(),
                (Phase::Holding, Phase::Releasing) => s.release(),
                _ => Ok(s.on_tick(&goal.map(|theta_raw| SlotMeasurement { theta_raw }))),
            };
            r.unwrap();
        }
        s
    };
    use Phase::*;
    for phase in [Idle, MovingToPrep, ReadyToClose, Closing, Holding, Stopped, Releasing] {
        for ev in [
            GraspEvent::Start(g.clone(), 1.0),
            GraspEvent::Tick([SlotMeasurement::default(); DOA]),
            GraspEvent::Stop,
            GraspEvent::Release,
        ] {
            let mut s = reach(phase);
            let name = format!("{ev:?}");
            match s.handle(ev) {
                Ok(_) => assert!(legal(phase, s.phase), "{phase:?} + {name}"),
                Err(_) => assert_eq!(s.phase, phase),
            }
        }
    }
}
