//! Grasp execution: named recipes of a preparatory and a target posture with
//! per-finger speed factors, and the session state machine that drives the
//! six position controllers and cuts motor power once a posture is reached.

use serde::{Deserialize, Serialize};

/// Degrees of actuation.
pub const DOA: usize = 6;

/// Actuator slots in hand order.
pub const SLOT_NAMES: [&str; DOA] = ["thumb_abduction", "thumb", "index", "middle", "ring", "pinky"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspDefinition {
    pub name: String,
    /// rad.
    pub prep_position: [f64; DOA],
    /// rad.
    pub target_position: [f64; DOA],
    pub finger_speed_factor: [f64; DOA],
}

/// File form of a grasp: angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspEntry {
    pub name: String,
    pub prep_deg: [f64; DOA],
    pub target_deg: [f64; DOA],
    pub speed_factor: [f64; DOA],
}

impl From<&GraspEntry> for GraspDefinition {
    fn from(e: &GraspEntry) -> Self {
        Self {
            name: e.name.clone(),
            prep_position: e.prep_deg.map(f64::to_radians),
            target_position: e.target_deg.map(f64::to_radians),
            finger_speed_factor: e.speed_factor,
        }
    }
}

impl GraspDefinition {
    /// Checks postures against per-slot travel `[lo, hi]` (rad) and speed
    /// factors against (0, 1].
    pub fn validate(&self, limits: &[(f64, f64); DOA]) -> Result<(), GraspError> {
        for i in 0..DOA {
            let (lo, hi) = limits[i];
            for (what, v) in [("prep", self.prep_position[i]), ("target", self.target_position[i])] {
                if !(v >= lo - 1e-12 && v <= hi + 1e-12) {
                    return Err(GraspError::InvalidGrasp(format!(
                        "{} {what} angle {:.2} deg outside [{:.1}, {:.1}]",
                        SLOT_NAMES[i],
                        v.to_degrees(),
                        lo.to_degrees(),
                        hi.to_degrees()
                    )));
                }
            }
            let f = self.finger_speed_factor[i];
            if !(f > 0.0 && f <= 1.0) {
                return Err(GraspError::InvalidGrasp(format!("{} speed factor {f} outside (0, 1]", SLOT_NAMES[i])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GraspLibrary {
    #[serde(rename = "grasp")]
    pub grasps: Vec<GraspEntry>,
}

fn normalize(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

impl GraspLibrary {
    /// Case-insensitive lookup that ignores separators.
    pub fn get(&self, name: &str) -> Option<GraspDefinition> {
        let key = normalize(name);
        self.grasps.iter().find(|g| normalize(&g.name) == key).map(GraspDefinition::from)
    }

    pub fn names(&self) -> Vec<&str> {
        self.grasps.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// The seven shipped grasps, authored against the default finger
    /// geometry (contact with a 25 mm cylinder at about 61 deg).
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_LIBRARY).expect("built-in grasp library parses")
    }
}

pub const BUILTIN_LIBRARY: &str = include_str!("../configs/grasps.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    MovingToPrep,
    ReadyToClose,
    Closing,
    Holding,
    Stopped,
    /// Opening back to the rest posture.
    Releasing,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraspError {
    #[error("a grasp is already in progress ({0:?})")]
    Busy(Phase),
    #[error("invalid grasp: {0}")]
    InvalidGrasp(String),
    #[error("global speed {0} outside (0, 1]")]
    InvalidSpeed(f64),
    #[error("manual stop is only possible while closing (phase {0:?})")]
    NotClosing(Phase),
    #[error("nothing to release (phase {0:?})")]
    NotHolding(Phase),
}

/// What the session asks of one actuator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotorCommand {
    /// Power the unit and servo it to `theta_set` no faster than `omega_lim`.
    Drive { slot: usize, theta_set: f64, omega_lim: f64 },
    /// Cut power; the worm holds the joint.
    PowerOff { slot: usize },
}

/// Per-slot feedback consumed by the session.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotMeasurement {
    /// Encoder angle, rad.
    pub theta_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSession {
    pub phase: Phase,
    pub active_grasp: Option<GraspDefinition>,
    pub global_speed: f64,
    /// Joint speed limit at factor 1, rad/s.
    pub omega_max: f64,
    /// Per-slot position tolerance, rad.
    pub tolerance: [f64; DOA],
    /// Per-slot travel limits, rad.
    pub limits: [(f64, f64); DOA],
    /// Rest posture used when releasing, rad.
    pub open_position: [f64; DOA],
    /// Slot has reached the posture of the current phase.
    pub done: [bool; DOA],
}

impl GraspSession {
    pub fn new(omega_max: f64, tolerance: [f64; DOA], limits: [(f64, f64); DOA]) -> Self {
        Self {
            phase: Phase::Idle,
            active_grasp: None,
            global_speed: 1.0,
            omega_max,
            tolerance,
            limits,
            open_position: [0.0; DOA],
            done: [false; DOA],
        }
    }

    fn finger_limit(&self, slot: usize) -> f64 {
        let factor = match (&self.active_grasp, self.phase) {
            (_, Phase::Releasing) | (None, _) => 1.0,
            (Some(g), _) => g.finger_speed_factor[slot],
        };
        self.omega_max * factor * self.global_speed
    }

    fn goal(&self) -> Option<[f64; DOA]> {
        match self.phase {
            Phase::MovingToPrep => self.active_grasp.as_ref().map(|g| g.prep_position),
            Phase::Closing => self.active_grasp.as_ref().map(|g| g.target_position),
            Phase::Releasing => Some(self.open_position),
            _ => None,
        }
    }

    fn drive_all(&mut self) -> Vec<MotorCommand> {
        let goal = self.goal().expect("moving phase has a goal");
        self.done = [false; DOA];
        (0..DOA)
            .map(|slot| MotorCommand::Drive { slot, theta_set: goal[slot], omega_lim: self.finger_limit(slot) })
            .collect()
    }

    /// Commands each finger toward the preparatory posture.
    pub fn start_grasp(&mut self, g: GraspDefinition, global_speed: f64) -> Result<Vec<MotorCommand>, GraspError> {
        if self.phase != Phase::Idle {
            return Err(GraspError::Busy(self.phase));
        }
        if !(global_speed > 0.0 && global_speed <= 1.0) {
            return Err(GraspError::InvalidSpeed(global_speed));
        }
        g.validate(&self.limits)?;
        self.active_grasp = Some(g);
        self.global_speed = global_speed;
        self.phase = Phase::MovingToPrep;
        Ok(self.drive_all())
    }

    /// Cuts power to every slot that reached the current goal and advances
    /// the phase once all have.
    pub fn on_tick(&mut self, meas: &[SlotMeasurement; DOA]) -> Vec<MotorCommand> {
        let Some(goal) = self.goal() else {
            if self.phase == Phase::ReadyToClose {
                self.phase = Phase::Closing;
                return self.drive_all();
            }
            return Vec::new();
        };
        let mut out = Vec::new();
        for slot in 0..DOA {
            if !self.done[slot] && (meas[slot].theta_raw - goal[slot]).abs() < self.tolerance[slot] {
                self.done[slot] = true;
                out.push(MotorCommand::PowerOff { slot });
            }
        }
        if self.done.iter().all(|d| *d) {
            self.phase = match self.phase {
                Phase::MovingToPrep => Phase::ReadyToClose,
                Phase::Closing => Phase::Holding,
                Phase::Releasing => {
                    self.active_grasp = None;
                    Phase::Idle
                }
                p => p,
            };
        }
        out
    }

    /// Operator stop while closing: all motors off, posture frozen.
    pub fn manual_stop(&mut self) -> Result<Vec<MotorCommand>, GraspError> {
        if self.phase != Phase::Closing {
            return Err(GraspError::NotClosing(self.phase));
        }
        self.phase = Phase::Stopped;
        self.done = [true; DOA];
        Ok((0..DOA).map(|slot| MotorCommand::PowerOff { slot }).collect())
    }

    /// Opens the hand from a held grasp at the global speed.
    pub fn release(&mut self) -> Result<Vec<MotorCommand>, GraspError> {
        if !matches!(self.phase, Phase::Holding | Phase::Stopped) {
            return Err(GraspError::NotHolding(self.phase));
        }
        self.phase = Phase::Releasing;
        Ok(self.drive_all())
    }

    /// All motors are meant to be unpowered.
    pub fn is_holding(&self) -> bool {
        matches!(self.phase, Phase::Holding | Phase::Stopped)
    }
}

/// Any input the session can receive.
#[derive(Debug, Clone, PartialEq)]
pub enum GraspEvent {
    Start(GraspDefinition, f64),
    Tick([SlotMeasurement; DOA]),
    Stop,
    Release,
}

impl GraspSession {
    pub fn handle(&mut self, ev: GraspEvent) -> Result<Vec<MotorCommand>, GraspError> {
        match ev {
            GraspEvent::Start(g, s) => self.start_grasp(g, s),
            GraspEvent::Tick(m) => Ok(self.on_tick(&m)),
            GraspEvent::Stop => self.manual_stop(),
            GraspEvent::Release => self.release(),
        }
    }
}
