//! Simulated hand and experiment runner: six servo loops, the grasp session,
//! fingertip taxels with their calibrations, a lumped object contact model,
//! the arm's lift and shake, and 10 Hz telemetry.
//!
//! All state is owned by [`HandSim`] and advanced in 100 us ticks. Commands
//! enter through a single queue drained at the start of every tick.

pub mod console;
mod experiment;
mod shake;

pub use experiment::*;
pub use shake::ShakeProfile;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::control::{ControlMode, ControllerConfig, ServoLoop, POSITION_GAIN};
use crate::grasp::{GraspError, GraspLibrary, GraspSession, MotorCommand, Phase, SlotMeasurement, DOA};
use crate::kinematics::{first_contact, ComplianceModel, KinematicsError, LinkageGeometry, Vec2};
use crate::plant::{count_resolution, sense_current, MotorParams, GRAVITY};
use crate::protocol::{telemetry_tick, Command, FingerTelemetry, TelemetryClock, TelemetryFrame};
use crate::tactile::{
    calibrate, calibration_trace, estimate_force, preset, CalibrationError, CalibrationModel, Finger, TaxelSim,
};

/// Simulation tick, us.
pub const TICK_US: u64 = 100;
const TICKS_PER_MS: u64 = 1000 / TICK_US;
const TICK_S: f64 = TICK_US as f64 * 1e-6;

/// Fingertip taxel of each slot.
pub const TAXEL_FINGER: [Option<Finger>; DOA] =
    [None, Some(Finger::Thumb), Some(Finger::Index), Some(Finger::Middle), Some(Finger::Ring), Some(Finger::Pinky)];

/// A contact counts as lost after this long at zero force, s.
pub const CONTACT_LOSS_TIME: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandConfig {
    pub geometry: LinkageGeometry,
    pub compliance: ComplianceModel,
    /// Planetary gearbox ratio per slot.
    pub gearbox: [f64; DOA],
    pub encoder_cpr: u32,
    /// Joint speed at speed factor 1, rad/s.
    pub omega_max: f64,
    /// Position tolerance in encoder counts.
    pub tolerance_counts: f64,
    /// (rad/s) per rad.
    pub position_gain: f64,
    /// Fingertip friction for grasps that do not cage the object.
    pub friction_coefficient: f64,
    /// Lever at which a finger must carry the full payload, mm.
    pub sizing_lever: f64,
    /// Sensor noise seed.
    pub seed: u64,
    /// s.
    pub grasp_timeout: f64,
    /// Time at the current limit without motion before the operator stops
    /// the grasp, s.
    pub stall_time: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        Self {
            geometry: LinkageGeometry::default(),
            compliance: ComplianceModel::default(),
            gearbox: [75.0, 100.0, 100.0, 75.0, 75.0, 75.0],
            encoder_cpr: 12,
            omega_max: 0.4,
            tolerance_counts: 1.0,
            position_gain: POSITION_GAIN,
            friction_coefficient: 0.5,
            sizing_lever: 36.0,
            seed: 1,
            grasp_timeout: 120.0,
            stall_time: 0.5,
        }
    }
}

impl HandConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.geometry.validate()?;
        let bad = |what: &str| Err(HarnessError::Config(format!("{what} must be positive")));
        if self.gearbox.iter().any(|g| !(*g > 0.0)) {
            return bad("gearbox ratio");
        }
        if self.encoder_cpr == 0 {
            return bad("encoder_cpr");
        }
        for (what, v) in [
            ("omega_max", self.omega_max),
            ("tolerance_counts", self.tolerance_counts),
            ("position_gain", self.position_gain),
            ("sizing_lever", self.sizing_lever),
            ("grasp_timeout", self.grasp_timeout),
            ("stall_time", self.stall_time),
            ("compliance.stiffness", self.compliance.stiffness),
            ("compliance.max_extension", self.compliance.max_extension),
        ] {
            if !(v > 0.0) {
                return bad(what);
            }
        }
        if !(self.friction_coefficient >= 0.0) {
            return Err(HarnessError::Config("friction_coefficient must be >= 0".into()));
        }
        Ok(())
    }

    pub fn motor(&self, slot: usize) -> MotorParams {
        MotorParams::with_gearbox(self.gearbox[slot])
    }

    pub fn controller(&self, slot: usize) -> ControllerConfig {
        let mut c = ControllerConfig::tuned(&self.motor(slot));
        c.kp_pos = self.position_gain;
        c.omega_lim = self.omega_max;
        c
    }

    /// Position tolerance per slot, rad.
    pub fn tolerance(&self) -> [f64; DOA] {
        std::array::from_fn(|s| self.tolerance_counts * count_resolution(self.encoder_cpr, &self.motor(s)))
    }

    pub fn travel_limits(&self) -> [(f64, f64); DOA] {
        [self.geometry.theta_range_rad(); DOA]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    /// mm.
    pub effective_radius: f64,
    /// kg.
    pub mass: f64,
    /// N/mm.
    #[serde(default = "default_object_stiffness")]
    pub stiffness: f64,
}

fn default_object_stiffness() -> f64 {
    50.0
}

impl ObjectSpec {
    pub fn new(name: &str, effective_radius: f64, mass: f64) -> Self {
        Self { name: name.into(), effective_radius, mass, stiffness: default_object_stiffness() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.effective_radius > 0.0 && self.stiffness > 0.0 && self.mass >= 0.0) {
            return Err(HarnessError::Config(format!(
                "object '{}' needs radius > 0, stiffness > 0 and mass >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// Lumped contact of one finger with the object: the follower spring in
/// series with the object surface, both referred to the MCP joint. Once the
/// follower reaches its extension stop only the object yields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSpec {
    /// MCP angle at first touch, rad.
    pub theta: f64,
    /// MCP to contact point, mm.
    pub lever: f64,
    /// Follower moment arm about the MCP joint, mm.
    pub arm: f64,
    pub enclosing: bool,
    /// N mm / rad.
    pub k_series: f64,
    /// N mm / rad.
    pub k_object: f64,
    /// Torque at which the follower hits its stop, N mm.
    pub tau_stop: f64,
}

impl ContactSpec {
    pub fn new(
        geom: &LinkageGeometry,
        comp: &ComplianceModel,
        obj: &ObjectSpec,
    ) -> Result<Option<Self>, KinematicsError> {
        let Some(c) = first_contact(geom, obj.effective_radius, 720)? else {
            return Ok(None);
        };
        let arm = c.pose.follower_moment_arm(Vec2::zeros());
        let k_link = comp.stiffness * arm * arm;
        let k_object = obj.stiffness * c.lever * c.lever;
        Ok(Some(Self {
            theta: c.theta,
            lever: c.lever,
            arm,
            enclosing: c.enclosing,
            k_series: k_link * k_object / (k_link + k_object),
            k_object,
            tau_stop: comp.stiffness * comp.max_extension * arm,
        }))
    }

    /// Joint torque resisting flexion at MCP angle `theta`, N mm.
    pub fn torque(&self, theta: f64) -> f64 {
        let d = theta - self.theta;
        if d <= 0.0 {
            return 0.0;
        }
        let d_stop = self.tau_stop / self.k_series;
        if d <= d_stop {
            self.k_series * d
        } else {
            self.tau_stop + self.k_object * (d - d_stop)
        }
    }

    /// Normal force at the contact for a joint torque, N.
    pub fn force(&self, torque: f64) -> f64 {
        torque / self.lever
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("unknown grasp '{0}'")]
    UnknownGrasp(String),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    SessionPhase(Phase),
    ContactOn { slot: usize },
    ContactOff { slot: usize },
    /// The emulated operator issued a manual stop.
    OperatorStop,
    /// Holding torque exceeded the gear train rating; the finger yields.
    Stall { slot: usize, torque: f64, rated: f64 },
    ObjectDropped,
    GraspFailed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    /// Tick count at the event.
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMark {
    pub name: String,
    pub start_tick: u64,
    pub end_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentLog {
    pub frames: Vec<TelemetryFrame>,
    pub phases: Vec<PhaseMark>,
    pub events: Vec<LogEvent>,
    /// Console-equivalent commands with their issue time.
    pub commands: Vec<(u64, String)>,
}

impl ExperimentLog {
    pub fn duration_ticks(&self) -> u64 {
        self.phases.last().map_or(0, |p| p.end_tick)
    }

    pub fn has_event(&self, f: impl Fn(&EventKind) -> bool) -> bool {
        self.events.iter().any(|e| f(&e.kind))
    }
}

struct ObjectState {
    spec: ObjectSpec,
    contacts: [Option<ContactSpec>; DOA],
    caged: bool,
    lifted: bool,
    dropped: bool,
    shake: Option<(ShakeProfile, u64)>,
}

/// The simulated hand with its object.
pub struct HandSim {
    pub config: HandConfig,
    pub library: GraspLibrary,
    pub servos: Vec<ServoLoop>,
    pub session: GraspSession,
    taxels: Vec<Option<TaxelSim>>,
    pub calibrations: Vec<Option<CalibrationModel>>,
    object: Option<ObjectState>,
    pub ticks: u64,
    clock: TelemetryClock,
    queue: VecDeque<Command>,
    pub log: ExperimentLog,
    /// True contact force per slot, N.
    forces: [f64; DOA],
    in_contact: [bool; DOA],
    zero_force_time: [f64; DOA],
    /// Longest zero-force interval of a finger that had contact, since the
    /// last reset, s.
    pub longest_contact_loss: f64,
    stall_timer: [f64; DOA],
    last_phase: Phase,
    /// Echo telemetry frames as CSV responses.
    pub stream: bool,
    /// Profile of the next shake, m/s and m.
    pub shake_velocity: f64,
    pub shake_amplitude: f64,
    responses: Vec<String>,
}

impl HandSim {
    pub fn new(config: HandConfig, library: GraspLibrary) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut servos = Vec::with_capacity(DOA);
        let mut taxels = Vec::with_capacity(DOA);
        let mut calibrations = Vec::with_capacity(DOA);
        for slot in 0..DOA {
            let mut s = ServoLoop::new(config.motor(slot), config.controller(slot), config.encoder_cpr);
            s.power_off();
            servos.push(s);
            match TAXEL_FINGER[slot] {
                Some(f) => {
                    let p = preset(f);
                    let trace = calibration_trace(&p.model, config.seed.wrapping_add(100 + slot as u64));
                    calibrations.push(Some(calibrate(&trace, p.degree)?));
                    taxels.push(Some(TaxelSim::new(p.model, config.seed.wrapping_add(slot as u64))));
                }
                None => {
                    calibrations.push(None);
                    taxels.push(None);
                }
            }
        }
        let session = GraspSession::new(config.omega_max, config.tolerance(), config.travel_limits());
        Ok(Self {
            config,
            library,
            servos,
            session,
            taxels,
            calibrations,
            object: None,
            ticks: 0,
            clock: TelemetryClock::new(TICK_US),
            queue: VecDeque::new(),
            log: ExperimentLog::default(),
            forces: [0.0; DOA],
            in_contact: [false; DOA],
            zero_force_time: [0.0; DOA],
            longest_contact_loss: 0.0,
            stall_timer: [0.0; DOA],
            last_phase: Phase::Idle,
            stream: false,
            shake_velocity: 0.8,
            shake_amplitude: 0.05,
            responses: Vec::new(),
        })
    }

    pub fn t_ms(&self) -> u64 {
        self.ticks / TICKS_PER_MS
    }

    pub fn t_s(&self) -> f64 {
        self.ticks as f64 * TICK_S
    }

    /// Puts an object between the fingers, resting on the table.
    pub fn place_object(&mut self, spec: &ObjectSpec) -> Result<(), HarnessError> {
        spec.validate()?;
        let mut contacts = [None; DOA];
        for (slot, c) in contacts.iter_mut().enumerate() {
            if TAXEL_FINGER[slot].is_some() {
                *c = ContactSpec::new(&self.config.geometry, &self.config.compliance, spec)?;
            }
        }
        let touching: Vec<&ContactSpec> = contacts.iter().flatten().collect();
        let caged = touching.len() >= 2 && touching.iter().all(|c| c.enclosing);
        self.object =
            Some(ObjectState { spec: spec.clone(), contacts, caged, lifted: false, dropped: false, shake: None });
        Ok(())
    }

    pub fn object_caged(&self) -> bool {
        self.object.as_ref().is_some_and(|o| o.caged)
    }

    pub fn object_dropped(&self) -> bool {
        self.object.as_ref().is_some_and(|o| o.dropped)
    }

    pub fn contact(&self, slot: usize) -> Option<&ContactSpec> {
        self.object.as_ref().and_then(|o| o.contacts[slot].as_ref())
    }

    /// Contact force per slot, N.
    pub fn forces(&self) -> [f64; DOA] {
        self.forces
    }

    /// Slots currently touching the object.
    pub fn in_contact(&self) -> [bool; DOA] {
        self.in_contact
    }

    pub fn taxel_reading(&self, slot: usize) -> Option<f64> {
        self.taxels[slot].as_ref().map(TaxelSim::reading)
    }

    /// Calibrated fingertip force, N.
    pub fn estimated_force(&self, slot: usize) -> f64 {
        match (&self.taxels[slot], &self.calibrations[slot]) {
            (Some(t), Some(c)) => estimate_force(c, t.reading()).force,
            _ => 0.0,
        }
    }

    pub fn telemetry(&self) -> [FingerTelemetry; DOA] {
        std::array::from_fn(|s| FingerTelemetry {
            angle: self.servos[s].theta_raw() as f32,
            current: sense_current(&self.servos[s].motor) as f32,
            force: self.estimated_force(s) as f32,
        })
    }

    pub fn push(&mut self, cmd: Command) {
        self.queue.push_back(cmd);
    }

    /// Responses produced since the last call.
    pub fn take_responses(&mut self) -> Vec<String> {
        std::mem::take(&mut self.responses)
    }

    fn event(&mut self, kind: EventKind) {
        self.log.events.push(LogEvent { tick: self.ticks, kind });
    }

    pub fn reset_contact_loss(&mut self) {
        self.longest_contact_loss = 0.0;
        self.zero_force_time = [0.0; DOA];
    }

    fn apply_motor(&mut self, c: MotorCommand) {
        match c {
            MotorCommand::Drive { slot, theta_set, omega_lim } => {
                let s = &mut self.servos[slot];
                s.cfg.mode = ControlMode::Position;
                s.cfg.omega_lim = omega_lim;
                s.ctrl.theta_set = theta_set;
                s.power_on();
            }
            MotorCommand::PowerOff { slot } => self.servos[slot].power_off(),
        }
    }

    fn apply_motors(&mut self, cmds: Vec<MotorCommand>) {
        for c in cmds {
            self.apply_motor(c);
        }
    }

    fn set_param(&mut self, path: &str, value: f64) -> Result<String, String> {
        let lower = path.to_ascii_lowercase();
        match lower.as_str() {
            "arm.lift" => {
                let o = self.object.as_mut().ok_or("no object placed")?;
                o.lifted = value != 0.0;
            }
            "arm.shake" => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err("arm.shake takes a whole number of cycles".into());
                }
                let t = self.ticks;
                let profile = ShakeProfile::new(self.shake_velocity, self.shake_amplitude, value as u32);
                let o = self.object.as_mut().ok_or("no object placed")?;
                o.shake = Some((profile, t));
            }
            "arm.shake_velocity" | "arm.shake_amplitude" => {
                if !(value > 0.0) {
                    return Err(format!("{path} must be positive"));
                }
                if lower == "arm.shake_velocity" {
                    self.shake_velocity = value;
                } else {
                    self.shake_amplitude = value;
                }
            }
            "console.stream" => self.stream = value != 0.0,
            "control.omega_max" | "control.kp_pos" => {
                if !(value > 0.0) {
                    return Err(format!("{path} must be positive"));
                }
                if lower == "control.omega_max" {
                    self.config.omega_max = value;
                    self.session.omega_max = value;
                } else {
                    self.config.position_gain = value;
                    for s in &mut self.servos {
                        s.cfg.kp_pos = value;
                    }
                }
            }
            "object.mass" => {
                if !(value >= 0.0) {
                    return Err("object.mass must be >= 0".into());
                }
                self.object.as_mut().ok_or("no object placed")?.spec.mass = value;
            }
            _ => return Err(format!("unknown parameter '{path}'")),
        }
        Ok(format!("ok param {path} {value}"))
    }

    fn direct_allowed(&self) -> Result<(), String> {
        match self.session.phase {
            Phase::Idle => Ok(()),
            p => Err(format!("finger commands need an idle session (phase {p:?})")),
        }
    }

    /// Executes one command; the `Ok` text is the acknowledgment.
    pub fn apply(&mut self, cmd: &Command) -> Result<String, String> {
        match cmd {
            Command::ExecuteGrasp { name, global_speed } => {
                let g = self.library.get(name.as_str()).ok_or_else(|| format!("unknown grasp '{name}'"))?;
                let gname = g.name.clone();
                let cmds = self.session.start_grasp(g, *global_speed).map_err(|e| e.to_string())?;
                self.apply_motors(cmds);
                Ok(format!("ok grasp {gname} speed {global_speed}"))
            }
            Command::Stop => {
                let cmds = self.session.manual_stop().map_err(|e| e.to_string())?;
                self.apply_motors(cmds);
                Ok("ok stop".into())
            }
            Command::Release => {
                let cmds = self.session.release().map_err(|e| e.to_string())?;
                self.apply_motors(cmds);
                Ok("ok release".into())
            }
            Command::SetMode { finger, mode } => {
                self.direct_allowed()?;
                self.servos[*finger].cfg.mode = *mode;
                Ok(format!("ok mode {finger} {mode:?}").to_lowercase())
            }
            Command::SetSetpoint { finger, value } => {
                self.direct_allowed()?;
                let s = &mut self.servos[*finger];
                match s.cfg.mode {
                    ControlMode::Position => {
                        let (lo, hi) = self.config.geometry.theta_range_rad();
                        if !(*value >= lo && *value <= hi) {
                            return Err(format!("position {value} outside travel"));
                        }
                        s.ctrl.theta_set = *value;
                    }
                    ControlMode::Velocity => s.ctrl.omega_set = value.clamp(-s.cfg.omega_lim, s.cfg.omega_lim),
                    ControlMode::Current => s.ctrl.i_set = value.clamp(-s.cfg.i_lim, s.cfg.i_lim),
                }
                s.power_on();
                Ok(format!("ok set {finger} {value}"))
            }
            Command::QueryState => Ok(self.state_line()),
            Command::SetParam { path, value } => self.set_param(path, *value),
        }
    }

    pub fn state_line(&self) -> String {
        let t = self.telemetry();
        let join = |f: &dyn Fn(&FingerTelemetry) -> String| t.iter().map(f).collect::<Vec<_>>().join(",");
        format!(
            "state t_ms={} phase={:?} theta_rad=[{}] current_A=[{}] force_N=[{}]",
            self.t_ms(),
            self.session.phase,
            join(&|f| format!("{:.4}", f.angle)),
            join(&|f| format!("{:.3}", f.current)),
            join(&|f| format!("{:.3}", f.force)),
        )
    }

    fn measurements(&self) -> [SlotMeasurement; DOA] {
        std::array::from_fn(|s| SlotMeasurement { theta_raw: self.servos[s].theta_raw() })
    }

    /// Closing fingers that sit at the current limit without moving.
    pub fn all_closing_fingers_stalled(&self) -> bool {
        if self.session.phase != Phase::Closing {
            return false;
        }
        let pending: Vec<usize> = (0..DOA).filter(|&s| !self.session.done[s]).collect();
        !pending.is_empty() && pending.iter().all(|&s| self.stall_timer[s] >= self.config.stall_time)
    }

    fn drop_object(&mut self, reason: &str) {
        if let Some(o) = self.object.as_mut() {
            if !o.dropped {
                o.dropped = true;
                self.event(EventKind::ObjectDropped);
                self.event(EventKind::GraspFailed(reason.into()));
            }
        }
    }

    fn shake_accel(&self) -> f64 {
        match self.object.as_ref().and_then(|o| o.shake) {
            Some((p, t0)) => p.accel((self.ticks - t0) as f64 * TICK_S),
            None => 0.0,
        }
    }

    /// Contact forces, holding checks and taxels, at 1 kHz.
    fn update_object(&mut self) {
        let a = self.shake_accel();
        let Some(o) = self.object.as_ref() else {
            for t in self.taxels.iter_mut().flatten() {
                t.step(0.0);
            }
            return;
        };
        let (mass, caged, lifted, dropped) = (o.spec.mass, o.caged, o.lifted, o.dropped);
        let contacts = o.contacts;
        let mut base = [0.0; DOA];
        let mut torque = [0.0; DOA];
        if !dropped {
            for s in 0..DOA {
                if let Some(c) = &contacts[s] {
                    torque[s] = c.torque(self.servos[s].motor.output_angle);
                    base[s] = c.force(torque[s]);
                }
            }
        }
        let n = base.iter().filter(|f| **f > 0.0).count();
        let mut forces = base;
        if lifted && !dropped && n > 0 {
            let share = mass * a / n as f64;
            for s in 0..DOA {
                if base[s] > 0.0 {
                    // the thumb opposes the fingers
                    let side = if s == 1 { -1.0 } else { 1.0 };
                    forces[s] = (base[s] + side * share).max(0.0);
                }
            }
            // every loaded finger must hold the payload at the sizing lever
            let lever = self.config.sizing_lever;
            for s in 0..DOA {
                if base[s] > 0.0 && !self.servos[s].motor.powered {
                    let load = torque[s] + mass * GRAVITY * lever + mass * a.abs() * lever / n as f64;
                    let rated = self.servos[s].params.rated_holding_torque();
                    if load > rated {
                        self.event(EventKind::Stall { slot: s, torque: load, rated });
                        self.drop_object("holding torque exceeded");
                        forces = [0.0; DOA];
                        break;
                    }
                }
            }
            if !caged && !self.object_dropped() {
                let grip: f64 = base.iter().sum::<f64>() * self.config.friction_coefficient;
                if grip < mass * (GRAVITY * GRAVITY + a * a).sqrt() {
                    self.drop_object("friction cannot carry the object");
                    forces = [0.0; DOA];
                }
            }
        }
        let dt = 1e-3;
        for s in 0..DOA {
            let touching = forces[s] > 0.0;
            if touching != self.in_contact[s] {
                self.in_contact[s] = touching;
                self.event(if touching { EventKind::ContactOn { slot: s } } else { EventKind::ContactOff { slot: s } });
            }
            if base[s] > 0.0 || self.zero_force_time[s] > 0.0 {
                if touching {
                    self.zero_force_time[s] = 0.0;
                } else {
                    self.zero_force_time[s] += dt;
                    self.longest_contact_loss = self.longest_contact_loss.max(self.zero_force_time[s]);
                }
            }
        }
        self.forces = forces;
        for (s, t) in self.taxels.iter_mut().enumerate() {
            if let Some(t) = t {
                t.step(forces[s]);
            }
        }
    }

    fn update_stall_timers(&mut self) {
        for s in 0..DOA {
            let m = &self.servos[s];
            let at_limit = m.motor.powered && m.motor.current.abs() >= 0.9 * m.cfg.i_lim;
            let still = m.motor.output_speed(&m.params).abs() < 0.05 * m.cfg.omega_lim.max(1e-6);
            self.stall_timer[s] = if at_limit && still { self.stall_timer[s] + 1e-3 } else { 0.0 };
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        while let Some(cmd) = self.queue.pop_front() {
            let text = match self.apply(&cmd) {
                Ok(ack) => ack,
                Err(e) => format!("error: {e}"),
            };
            self.responses.push(text);
        }
        if self.ticks.is_multiple_of(TICKS_PER_MS) {
            let meas = self.measurements();
            let cmds = self.session.on_tick(&meas);
            self.apply_motors(cmds);
            if self.session.phase != self.last_phase {
                self.last_phase = self.session.phase;
                self.event(EventKind::SessionPhase(self.session.phase));
            }
            self.update_object();
            self.update_stall_timers();
        }
        for s in 0..DOA {
            let load = match self.contact(s) {
                Some(c) if !self.object_dropped() => c.torque(self.servos[s].motor.output_angle),
                _ => 0.0,
            };
            self.servos[s].step(load);
        }
        let mut clock = self.clock.clone();
        let frame = telemetry_tick(&mut clock, || self.telemetry());
        self.clock = clock;
        if let Some(frame) = frame {
            if self.stream {
                self.responses.push(format!("telemetry {}", frame.csv()));
            }
            self.log.frames.push(frame);
        }
        self.ticks += 1;
    }

    pub fn run_ticks(&mut self, n: u64) {
        for _ in 0..n {
            self.step();
        }
    }

    pub fn run_for(&mut self, seconds: f64) {
        self.run_ticks((seconds / TICK_S).round() as u64);
    }

    /// Runs until `done` holds on a millisecond boundary or `timeout`
    /// seconds pass. Returns whether `done` was met.
    pub fn run_until(&mut self, timeout: f64, mut done: impl FnMut(&mut Self) -> bool) -> bool {
        let end = self.ticks + (timeout / TICK_S).round() as u64;
        while self.ticks < end {
            if self.ticks.is_multiple_of(TICKS_PER_MS) && done(self) {
                return true;
            }
            self.step();
        }
        false
    }
}
