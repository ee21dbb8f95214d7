//! Brushed DC actuation unit: LR armature, rotor, gearbox and a self-locking
//! worm stage, plus the quadrature encoder and the unsigned current sense of
//! the H-bridge driver.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;

/// Electrical and mechanical constants of one actuation unit (SI unless
/// noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// Ohm.
    pub resistance: f64,
    /// H.
    pub inductance: f64,
    /// N m / A.
    pub torque_constant: f64,
    /// V s / rad.
    pub backemf_constant: f64,
    /// kg m^2, referred to the motor shaft.
    pub rotor_inertia: f64,
    /// N m s / rad, referred to the motor shaft.
    pub viscous_friction: f64,
    pub gearbox_ratio: f64,
    pub worm_ratio: f64,
    /// Forward efficiency of the worm stage.
    pub worm_efficiency: f64,
    /// V.
    pub supply_voltage: f64,
    /// Gearbox output stall torque at the supply voltage, N mm.
    pub gearbox_stall_torque: f64,
}

/// Motor-shaft stall torque of the 75:1 unit (107 N mm at the gearbox output).
const MOTOR_STALL_TORQUE_NM: f64 = 107.0e-3 / 75.0;
/// Chosen so the unloaded motor runs at 30 000 rpm at 6 V.
const NO_LOAD_SPEED: f64 = 3141.592653589793;
/// Mechanical time constant at constant voltage (four of them is ~50 ms).
const MECH_TIME_CONSTANT: f64 = 12.5e-3;

impl MotorParams {
    /// Same motor behind a different gearbox. `k_t` follows from the stall
    /// point (6 V / 3.2 Ohm, 107 N mm / 75) and `k_e = k_t`.
    pub fn with_gearbox(gearbox_ratio: f64) -> Self {
        let resistance = 3.2;
        let supply_voltage = 6.0;
        let stall_current = supply_voltage / resistance;
        let kt = MOTOR_STALL_TORQUE_NM / stall_current;
        let ke = kt;
        // no-load: kt*U/R = (b + kt*ke/R) * w_nl
        let electrical_damping = kt * ke / resistance;
        let friction = kt * supply_voltage / resistance / NO_LOAD_SPEED - electrical_damping;
        let inertia = MECH_TIME_CONSTANT * (friction + electrical_damping);
        Self {
            resistance,
            inductance: 0.6e-3,
            torque_constant: kt,
            backemf_constant: ke,
            rotor_inertia: inertia,
            viscous_friction: friction,
            gearbox_ratio,
            worm_ratio: 20.0,
            worm_efficiency: 0.5,
            supply_voltage,
            gearbox_stall_torque: MOTOR_STALL_TORQUE_NM * gearbox_ratio * 1e3,
        }
    }

    pub fn total_ratio(&self) -> f64 {
        self.gearbox_ratio * self.worm_ratio
    }

    /// L / R.
    pub fn electrical_time_constant(&self) -> f64 {
        self.inductance / self.resistance
    }

    /// Torque at the worm output (N mm) produced by motor current `i`.
    pub fn output_torque(&self, current: f64) -> f64 {
        self.torque_constant * current * self.total_ratio() * self.worm_efficiency * 1e3
    }

    /// Highest output torque the gear train is rated to carry (N mm): the
    /// gearbox stall torque passed through an ideal worm.
    pub fn rated_holding_torque(&self) -> f64 {
        self.gearbox_stall_torque * self.worm_ratio
    }
}

impl Default for MotorParams {
    fn default() -> Self {
        Self::with_gearbox(75.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    /// A, signed.
    pub current: f64,
    /// rad/s at the motor shaft.
    pub rotor_speed: f64,
    /// rad after gearbox and worm.
    pub output_angle: f64,
    /// V actually applied after clamping.
    pub applied_voltage: f64,
    pub powered: bool,
    /// Number of steps whose inputs had to be clamped.
    pub clamp_events: u32,
}

impl MotorState {
    pub fn powered() -> Self {
        Self { powered: true, ..Default::default() }
    }

    /// Output shaft speed, rad/s.
    pub fn output_speed(&self, p: &MotorParams) -> f64 {
        self.rotor_speed / p.total_ratio()
    }
}

/// Advances the unit by `dt` seconds under terminal voltage `u` and an output
/// load torque (N mm, positive resists positive rotation).
///
/// The armature is integrated exactly over each substep with the rotor speed
/// frozen; the rotor uses implicit friction. Substeps are at most a tenth of
/// the electrical time constant. The worm stage cannot be back-driven: a load
/// pushing in the direction of motion contributes nothing, and a load alone
/// never starts the rotor. Unpowered units carry no current and do not move.
pub fn step_motor(p: &MotorParams, s: &MotorState, u: f64, load_torque_output: f64, dt: f64) -> MotorState {
    let mut next = *s;
    let mut dt = dt;
    if !(dt > 0.0 && dt <= 1e-3) {
        next.clamp_events += 1;
        dt = if dt.is_finite() { dt.clamp(1e-9, 1e-3) } else { 1e-3 };
    }
    if !next.powered {
        next.current = 0.0;
        next.rotor_speed = 0.0;
        next.applied_voltage = 0.0;
        return next;
    }
    let mut u = if u.is_finite() { u } else { 0.0 };
    if u.abs() > p.supply_voltage {
        next.clamp_events += 1;
        u = u.clamp(-p.supply_voltage, p.supply_voltage);
    }
    next.applied_voltage = u;

    let tau_e = p.electrical_time_constant();
    let substeps = (dt / (tau_e / 10.0)).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    let decay = (-h / tau_e).exp();
    let ratio = p.total_ratio();
    let load_motor = load_torque_output * 1e-3 / (ratio * p.worm_efficiency);

    for _ in 0..substeps {
        let i_inf = (u - p.backemf_constant * next.rotor_speed) / p.resistance;
        next.current = i_inf + (next.current - i_inf) * decay;

        let tau_m = p.torque_constant * next.current;
        let w = next.rotor_speed;
        let dir = if w != 0.0 { w.signum() } else if tau_m != 0.0 { tau_m.signum() } else { 0.0 };
        let resisting = if dir * load_motor > 0.0 { load_motor } else { 0.0 };
        let mut w_new = (p.rotor_inertia * w + h * (tau_m - resisting))
            / (p.rotor_inertia + h * p.viscous_friction);
        if w != 0.0 {
            if w_new.signum() != w.signum() {
                w_new = 0.0;
            }
        } else if w_new * tau_m.signum() <= 0.0 {
            w_new = 0.0;
        }
        next.rotor_speed = w_new;
        next.output_angle += w_new * h / ratio;
    }
    next
}

/// Encoder count: `floor(motor angle / 2pi * cpr)`.
pub fn read_encoder(s: &MotorState, counts_per_motor_rev: u32, p: &MotorParams) -> i64 {
    assert!(counts_per_motor_rev > 0, "encoder needs at least one count per revolution");
    let revs = s.output_angle / TAU * p.total_ratio();
    // absorb the rounding of angles that sit exactly on a count edge
    (revs * counts_per_motor_rev as f64 + 1e-9).floor() as i64
}

/// Output angle (rad) represented by an encoder count.
pub fn counts_to_angle(counts: i64, counts_per_motor_rev: u32, p: &MotorParams) -> f64 {
    counts as f64 * TAU / (counts_per_motor_rev as f64 * p.total_ratio())
}

/// Output angle of one encoder count.
pub fn count_resolution(counts_per_motor_rev: u32, p: &MotorParams) -> f64 {
    counts_to_angle(1, counts_per_motor_rev, p)
}

/// The driver reports only the magnitude of the armature current.
pub fn sense_current(s: &MotorState) -> f64 {
    s.current.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizingResult {
    /// N.
    pub grip_force: f64,
    /// N mm.
    pub mcp_torque: f64,
    /// N mm.
    pub motor_torque: f64,
    pub safety_factor: f64,
}

/// Required actuator torque for holding `payload_mass` (kg) at `lever_arm`
/// (mm) from the MCP joint behind a worm of `worm_ratio`.
pub fn size_actuation(
    payload_mass: f64,
    lever_arm: f64,
    worm_ratio: f64,
    gearbox_stall_torque: f64,
) -> SizingResult {
    let grip_force = payload_mass * GRAVITY;
    let mcp_torque = grip_force * lever_arm;
    let motor_torque = mcp_torque / worm_ratio;
    SizingResult {
        grip_force,
        mcp_torque,
        motor_torque,
        safety_factor: gearbox_stall_torque / motor_torque,
    }
}

/// Heaviest payload whose sizing safety factor is still >= 1 (kg).
pub fn sizing_payload_limit(lever_arm: f64, worm_ratio: f64, gearbox_stall_torque: f64) -> f64 {
    gearbox_stall_torque * worm_ratio / (lever_arm * GRAVITY)
}
