use serde::{Deserialize, Serialize};

use super::{EventKind, ExperimentLog, HandConfig, HandSim, HarnessError, ObjectSpec, PhaseMark, ShakeProfile};
use super::{CONTACT_LOSS_TIME, TICKS_PER_MS, TICK_S};
use crate::grasp::{GraspLibrary, Phase, DOA};
use crate::protocol::{Command, GraspName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenarioPhase {
    Grasp,
    Hold {
        #[serde(default = "default_hold")]
        duration: f64,
    },
    /// The arm lifts the hand off the table.
    Move {
        #[serde(default = "default_move")]
        duration: f64,
    },
    Hold2 {
        #[serde(default = "default_hold")]
        duration: f64,
    },
    Shake {
        /// m/s.
        #[serde(default = "default_shake_velocity")]
        velocity: f64,
        /// m.
        #[serde(default = "default_shake_amplitude")]
        amplitude: f64,
        #[serde(default = "default_shake_cycles")]
        cycles: u32,
    },
}

fn default_hold() -> f64 {
    10.0
}
fn default_move() -> f64 {
    2.0
}
fn default_shake_velocity() -> f64 {
    0.8
}
fn default_shake_amplitude() -> f64 {
    0.05
}
fn default_shake_cycles() -> u32 {
    5
}

impl ScenarioPhase {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Grasp => "grasp",
            Self::Hold { .. } => "hold",
            Self::Move { .. } => "move",
            Self::Hold2 { .. } => "hold2",
            Self::Shake { .. } => "shake",
        }
    }
}

pub fn default_phases() -> Vec<ScenarioPhase> {
    vec![
        ScenarioPhase::Grasp,
        ScenarioPhase::Hold { duration: default_hold() },
        ScenarioPhase::Move { duration: default_move() },
        ScenarioPhase::Hold2 { duration: default_hold() },
        ScenarioPhase::Shake {
            velocity: default_shake_velocity(),
            amplitude: default_shake_amplitude(),
            cycles: default_shake_cycles(),
        },
    ]
}

/// Outcomes a scenario file can require.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub retained: Option<bool>,
    pub grasp_failed: Option<bool>,
    pub dropped: Option<bool>,
    pub zero_holding_current: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub grasp: String,
    #[serde(default = "default_speed")]
    pub speed: f64,
    pub object: ObjectSpec,
    #[serde(default = "default_phases", rename = "phase")]
    pub phases: Vec<ScenarioPhase>,
    #[serde(default)]
    pub expect: Expectations,
    #[serde(default)]
    pub hand: Option<HandConfig>,
}

fn default_speed() -> f64 {
    1.0
}

impl Scenario {
    pub fn new(name: &str, grasp: &str, object: ObjectSpec) -> Self {
        Self {
            name: name.into(),
            grasp: grasp.into(),
            speed: 1.0,
            object,
            phases: default_phases(),
            expect: Expectations::default(),
            hand: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.object.validate()?;
        if !(self.speed > 0.0 && self.speed <= 1.0) {
            return Err(HarnessError::Config(format!("speed {} outside (0, 1]", self.speed)));
        }
        for p in &self.phases {
            let ok = match p {
                ScenarioPhase::Grasp => true,
                ScenarioPhase::Hold { duration } | ScenarioPhase::Move { duration } | ScenarioPhase::Hold2 { duration } => {
                    *duration > 0.0
                }
                ScenarioPhase::Shake { velocity, amplitude, cycles } => {
                    *velocity > 0.0 && *amplitude > 0.0 && *cycles > 0
                }
            };
            if !ok {
                return Err(HarnessError::Config(format!("{} phase needs positive parameters", p.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    /// Holding or Stopped was reached.
    pub grasp_reached: bool,
    /// Grasp command to Holding/Stopped, s.
    pub closing_time: Option<f64>,
    pub operator_stop: bool,
    pub grasp_failed: bool,
    pub dropped: bool,
    pub stalled: bool,
    /// Largest motor current seen after the grasp was reached, A.
    pub max_holding_current: f64,
    /// Largest joint motion after the grasp was reached, rad.
    pub max_angle_drift: f64,
    /// Longest zero-force interval of a contacting finger during shake, s.
    pub longest_contact_loss: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub log: ExperimentLog,
    pub summary: ExperimentSummary,
}

impl ExperimentResult {
    /// Failed expectations, empty when all hold.
    pub fn check(&self, e: &Expectations) -> Vec<String> {
        let s = &self.summary;
        let mut out = Vec::new();
        let mut want = |what: &str, expected: Option<bool>, got: bool| {
            if let Some(x) = expected {
                if x != got {
                    out.push(format!("expected {what} = {x}, got {got}"));
                }
            }
        };
        want("retained", e.retained, s.retained);
        want("grasp_failed", e.grasp_failed, s.grasp_failed);
        want("dropped", e.dropped, s.dropped);
        want("zero_holding_current", e.zero_holding_current, s.grasp_reached && s.max_holding_current == 0.0);
        out
    }
}

fn issue(hand: &mut HandSim, line: String, cmd: Command) {
    hand.log.commands.push((hand.t_ms(), line));
    hand.push(cmd);
}

/// Replays the grasp/hold/move/hold/shake procedure on one object.
pub fn run_experiment(sc: &Scenario, cfg: &HandConfig, library: &GraspLibrary) -> Result<ExperimentResult, HarnessError> {
    sc.validate()?;
    let grasp = library.get(&sc.grasp).ok_or_else(|| HarnessError::UnknownGrasp(sc.grasp.clone()))?;
    let mut hand = HandSim::new(cfg.clone(), library.clone())?;
    hand.place_object(&sc.object)?;
    let mut summary = ExperimentSummary::default();
    let mut hold_angles: Option<[f64; DOA]> = None;
    let mut shake_loss = 0.0f64;

    for phase in &sc.phases {
        let start = hand.ticks;
        match phase {
            ScenarioPhase::Grasp => {
                let name = GraspName::parse(&grasp.name);
                issue(
                    &mut hand,
                    format!("grasp {} speed {}", grasp.name, sc.speed),
                    Command::ExecuteGrasp { name, global_speed: sc.speed },
                );
                let reached = hand.run_until(cfg.grasp_timeout, |h| {
                    if h.all_closing_fingers_stalled() && !h.log.has_event(|e| *e == EventKind::OperatorStop) {
                        h.log.events.push(super::LogEvent { tick: h.ticks, kind: EventKind::OperatorStop });
                        issue(h, "stop".into(), Command::Stop);
                    }
                    h.session.is_holding()
                });
                summary.grasp_reached = reached;
                if reached {
                    summary.closing_time = Some((hand.ticks - start) as f64 * TICK_S);
                    hold_angles = Some(std::array::from_fn(|s| hand.servos[s].motor.output_angle));
                }
                let touching = hand.in_contact().iter().any(|c| *c);
                if !reached {
                    hand.log.events.push(super::LogEvent {
                        tick: hand.ticks,
                        kind: EventKind::GraspFailed("grasp did not complete".into()),
                    });
                } else if !touching {
                    hand.log.events.push(super::LogEvent {
                        tick: hand.ticks,
                        kind: EventKind::GraspFailed("no finger touches the object".into()),
                    });
                }
            }
            ScenarioPhase::Hold { duration } | ScenarioPhase::Hold2 { duration } => hand.run_for(*duration),
            ScenarioPhase::Move { duration } => {
                issue(&mut hand, "param arm.lift 1".into(), Command::SetParam { path: "arm.lift".into(), value: 1.0 });
                hand.run_for(*duration);
            }
            ScenarioPhase::Shake { velocity, amplitude, cycles } => {
                let profile = ShakeProfile::new(*velocity, *amplitude, *cycles);
                for (path, value, current) in [
                    ("arm.shake_velocity", *velocity, hand.shake_velocity),
                    ("arm.shake_amplitude", *amplitude, hand.shake_amplitude),
                ] {
                    if value != current {
                        issue(&mut hand, format!("param {path} {value}"), Command::SetParam { path: path.into(), value });
                    }
                }
                issue(
                    &mut hand,
                    format!("param arm.shake {cycles}"),
                    Command::SetParam { path: "arm.shake".into(), value: *cycles as f64 },
                );
                hand.reset_contact_loss();
                hand.run_for(profile.duration() + CONTACT_LOSS_TIME);
                shake_loss = shake_loss.max(hand.longest_contact_loss);
            }
        }
        if let Some(a0) = hold_angles {
            for s in 0..DOA {
                let m = &hand.servos[s].motor;
                summary.max_angle_drift = summary.max_angle_drift.max((m.output_angle - a0[s]).abs());
            }
        }
        hand.log.phases.push(PhaseMark { name: phase.name().into(), start_tick: start, end_tick: hand.ticks });
    }

    if let Some(after) = hand.log.events.iter().find(|e| matches!(e.kind, EventKind::SessionPhase(Phase::Holding | Phase::Stopped))) {
        let first_frame_tick = |f: &crate::protocol::TelemetryFrame| f.t_ms as u64 * TICKS_PER_MS;
        summary.max_holding_current = hand
            .log
            .frames
            .iter()
            .filter(|f| first_frame_tick(f) > after.tick)
            .flat_map(|f| f.fingers.iter().map(|x| x.current.abs() as f64))
            .fold(0.0, f64::max);
    }
    summary.operator_stop = hand.log.has_event(|e| *e == EventKind::OperatorStop);
    summary.grasp_failed = hand.log.has_event(|e| matches!(e, EventKind::GraspFailed(_)));
    summary.dropped = hand.object_dropped();
    summary.stalled = hand.log.has_event(|e| matches!(e, EventKind::Stall { .. }));
    summary.longest_contact_loss = shake_loss;
    summary.retained = summary.grasp_reached
        && !summary.grasp_failed
        && !summary.dropped
        && !summary.stalled
        && shake_loss <= CONTACT_LOSS_TIME;
    Ok(ExperimentResult { log: std::mem::take(&mut hand.log), summary })
}

/// Object used by the speed test and the payload test.
pub fn handle_object(mass: f64) -> ObjectSpec {
    ObjectSpec::new("handle", 25.0, mass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedRow {
    pub factor: f64,
    /// Grasp command to Holding, s.
    pub closing: f64,
    /// Release command back to Idle, s.
    pub opening: f64,
}

/// MediumWrap on the handle object, closed and reopened at each global
/// speed factor.
pub fn speed_test(cfg: &HandConfig, library: &GraspLibrary, factors: &[f64]) -> Result<Vec<SpeedRow>, HarnessError> {
    let mut rows = Vec::new();
    for &factor in factors {
        let mut hand = HandSim::new(cfg.clone(), library.clone())?;
        hand.place_object(&handle_object(0.5))?;
        hand.push(Command::ExecuteGrasp { name: GraspName::MediumWrap, global_speed: factor });
        let t0 = hand.ticks;
        if !hand.run_until(cfg.grasp_timeout / factor.min(1.0), |h| h.session.is_holding()) {
            return Err(HarnessError::Config(format!("MediumWrap did not close at speed {factor}")));
        }
        let closing = (hand.ticks - t0) as f64 * TICK_S;
        hand.push(Command::Release);
        let t1 = hand.ticks;
        if !hand.run_until(cfg.grasp_timeout, |h| h.ticks > t1 && h.session.phase == Phase::Idle) {
            return Err(HarnessError::Config(format!("MediumWrap did not reopen at speed {factor}")));
        }
        let opening = (hand.ticks - t1) as f64 * TICK_S;
        rows.push(SpeedRow { factor, closing, opening });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadResult {
    pub pass: bool,
    pub result: ExperimentResult,
}

/// MediumWrap on a handle of `mass` kg through the full procedure; passes
/// when retained through the shake with no holding current.
pub fn payload_hold_test(cfg: &HandConfig, library: &GraspLibrary, mass: f64) -> Result<PayloadResult, HarnessError> {
    if !(mass >= 0.0) {
        return Err(HarnessError::Config(format!("mass {mass} must be >= 0")));
    }
    let sc = Scenario::new("payload", "MediumWrap", handle_object(mass));
    let result = run_experiment(&sc, cfg, library)?;
    let s = &result.summary;
    let pass = s.retained && s.max_holding_current == 0.0;
    Ok(PayloadResult { pass, result })
}
