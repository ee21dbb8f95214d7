//! Cascaded multi-rate motor controller: P position and PID velocity at the
//! outer rate, PI current at the inner rate, with conditional-integration
//! anti-windup and sign reconstruction of the unsigned current sense.
//!
//! All angles and speeds are at the finger joint (output of the worm).

use serde::{Deserialize, Serialize};

use crate::plant::{counts_to_angle, read_encoder, sense_current, step_motor, MotorParams, MotorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    Position,
    Velocity,
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// (rad/s) per rad.
    pub kp_pos: f64,
    /// A per (rad/s).
    pub kp_vel: f64,
    pub ki_vel: f64,
    pub kd_vel: f64,
    /// V per A.
    pub kp_cur: f64,
    pub ki_cur: f64,
    /// rad/s.
    pub omega_lim: f64,
    /// A.
    pub i_lim: f64,
    /// V.
    pub u_lim: f64,
    /// Hz.
    pub rate_outer: f64,
    /// Hz.
    pub rate_inner: f64,
    /// EMA weight on the commanded voltage, emulating the armature LR lag.
    pub ema_u_alpha: f64,
    /// EMA weight on the raw current magnitude.
    pub ema_i_alpha: f64,
    /// EMA weight on the velocity-error derivative.
    pub d_filter_alpha: f64,
    /// EMA weight on the encoder-difference velocity.
    pub omega_filter_alpha: f64,
    pub mode: ControlMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::tuned(&MotorParams::default())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must lie in (0, 1]")]
    BadAlpha(&'static str),
    #[error("inner rate must be an integer multiple of the outer rate")]
    RateRatio,
}

impl ControllerConfig {
    /// Gains for a given plant: current loop by pole placement on the sampled
    /// LR model, velocity loop by cancelling the mechanical pole.
    pub fn tuned(p: &MotorParams) -> Self {
        let rate_inner = 10_000.0;
        let rate_outer = 1_000.0;
        let (kp_cur, ki_cur) = current_loop_gains(p, 1.0 / rate_inner, CURRENT_POLE);
        let (kp_vel, ki_vel) = velocity_loop_gains(p, VELOCITY_BANDWIDTH);
        Self {
            kp_pos: POSITION_GAIN,
            kp_vel,
            ki_vel,
            kd_vel: kp_vel * 1e-3,
            kp_cur,
            ki_cur,
            omega_lim: 0.4,
            i_lim: 0.3,
            u_lim: p.supply_voltage,
            rate_outer,
            rate_inner,
            ema_u_alpha: lr_ema_alpha(p, 1.0 / rate_inner),
            ema_i_alpha: ema_alpha_for_cutoff(15_000.0, 1.0 / rate_inner),
            d_filter_alpha: 0.2,
            omega_filter_alpha: 0.2,
            mode: ControlMode::Position,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("omega_lim", self.omega_lim),
            ("i_lim", self.i_lim),
            ("u_lim", self.u_lim),
            ("rate_outer", self.rate_outer),
            ("rate_inner", self.rate_inner),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, v) in [
            ("kp_pos", self.kp_pos),
            ("kp_vel", self.kp_vel),
            ("ki_vel", self.ki_vel),
            ("kd_vel", self.kd_vel),
            ("kp_cur", self.kp_cur),
            ("ki_cur", self.ki_cur),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, a) in [
            ("ema_u_alpha", self.ema_u_alpha),
            ("ema_i_alpha", self.ema_i_alpha),
            ("d_filter_alpha", self.d_filter_alpha),
            ("omega_filter_alpha", self.omega_filter_alpha),
        ] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(ConfigError::BadAlpha(name));
            }
        }
        let ratio = self.rate_inner / self.rate_outer;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError::RateRatio);
        }
        Ok(())
    }

    /// Inner ticks per outer tick.
    pub fn rate_ratio(&self) -> u64 {
        (self.rate_inner / self.rate_outer).round() as u64
    }

    pub fn dt_inner(&self) -> f64 {
        1.0 / self.rate_inner
    }

    pub fn dt_outer(&self) -> f64 {
        1.0 / self.rate_outer
    }
}

/// Closed-loop pole of the sampled current loop.
pub const CURRENT_POLE: f64 = 0.4;
/// Velocity loop crossover, rad/s.
pub const VELOCITY_BANDWIDTH: f64 = 25.0;
/// Position gain that keeps the default plant's step overshoot under 10 %.
pub const POSITION_GAIN: f64 = 12.0;

/// EMA weight whose time constant is the armature's L/R at sample time `dt`.
pub fn lr_ema_alpha(p: &MotorParams, dt: f64) -> f64 {
    1.0 - (-dt / p.electrical_time_constant()).exp()
}

/// EMA weight of a first-order low pass with the given cutoff (Hz).
pub fn ema_alpha_for_cutoff(cutoff_hz: f64, dt: f64) -> f64 {
    1.0 - (-std::f64::consts::TAU * cutoff_hz * dt).exp()
}

/// PI gains placing the sampled current loop's single pole at `pole`.
///
/// With a zero-order hold the armature is `b / (z - a)`, `a = exp(-dt/tau)`,
/// `b = (1 - a) / R`. The PI zero cancels `a`, leaving `K / (z - 1)` with the
/// closed-loop pole at `1 - K`.
pub fn current_loop_gains(p: &MotorParams, dt: f64, pole: f64) -> (f64, f64) {
    let a = (-dt / p.electrical_time_constant()).exp();
    let b = (1.0 - a) / p.resistance;
    let total = (1.0 - pole) / b;
    let kp = total * a;
    let ki = (total - kp) / dt;
    (kp, ki)
}

/// PI gains for the current-driven rotor seen at the output joint,
/// `K / (1 + tau_m s)`, cancelling `tau_m` and crossing over at `bandwidth`.
pub fn velocity_loop_gains(p: &MotorParams, bandwidth: f64) -> (f64, f64) {
    let tau_m = p.rotor_inertia / p.viscous_friction;
    let gain = p.torque_constant / (p.viscous_friction * p.total_ratio());
    let kp = bandwidth * tau_m / gain;
    (kp, kp / tau_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    /// Stored velocity-error integral, rad.
    pub integ_vel: f64,
    /// Stored current-error integral, A s.
    pub integ_cur: f64,
    pub prev_vel_err: Option<f64>,
    pub d_filtered: f64,
    pub ema_u: f64,
    pub ema_i_abs: f64,
    pub theta_set: f64,
    pub omega_set: f64,
    pub i_set: f64,
    pub last_u_set: f64,
    /// Last signed current estimate.
    pub i_signed: f64,
    pub omega_est: f64,
    pub prev_theta: Option<f64>,
    /// Inner ticks executed so far.
    pub tick: u64,
    /// Outer-loop executions so far.
    pub outer_ticks: u64,
}

impl ControllerState {
    pub fn new(theta_set: f64) -> Self {
        Self { theta_set, ..Default::default() }
    }

    /// Clears integrators, filters and the loop counter, keeping setpoints.
    pub fn reset_dynamics(&mut self) {
        *self = Self {
            theta_set: self.theta_set,
            omega_set: self.omega_set,
            i_set: self.i_set,
            ..Default::default()
        };
    }
}

/// What the driver board sees of one motor at an inner tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Encoder position, rad at the joint.
    pub theta_raw: f64,
    /// Externally supplied velocity; when `None` it is estimated from
    /// encoder differences at the outer rate.
    pub omega_raw: Option<f64>,
    /// Unsigned current sense, A.
    pub i_raw_abs: f64,
}

/// PI(D) update with conditional integration: the error is not integrated
/// while the output is saturated and the error would push it further. The
/// stored integral is also held within `limit / ki`.
fn pi_update(integ: &mut f64, kp: f64, ki: f64, extra: f64, err: f64, dt: f64, limit: f64) -> f64 {
    let candidate = *integ + err * dt;
    let unsat = kp * err + ki * candidate + extra;
    let pushing = unsat.abs() > limit && err * unsat > 0.0;
    if !pushing {
        *integ = candidate;
    }
    if ki > 0.0 {
        let bound = limit / ki;
        *integ = integ.clamp(-bound, bound);
    }
    let out = kp * err + ki * *integ + extra;
    if out.is_finite() {
        out.clamp(-limit, limit)
    } else {
        0.0
    }
}

/// Position loop: `omega_set = clamp(kp_pos * (theta_set - theta_meas))`.
pub fn tick_position(cfg: &ControllerConfig, st: &mut ControllerState, theta_meas: f64) -> f64 {
    let w = (cfg.kp_pos * (st.theta_set - theta_meas)).clamp(-cfg.omega_lim, cfg.omega_lim);
    st.omega_set = if w.is_finite() { w } else { 0.0 };
    st.omega_set
}

/// Velocity loop with a filtered derivative.
pub fn tick_velocity(cfg: &ControllerConfig, st: &mut ControllerState, omega_meas: f64, dt: f64) -> f64 {
    let err = st.omega_set - omega_meas;
    let d_raw = match st.prev_vel_err {
        Some(prev) => (err - prev) / dt,
        None => 0.0,
    };
    st.prev_vel_err = Some(err);
    st.d_filtered += cfg.d_filter_alpha * (d_raw - st.d_filtered);
    let d_term = cfg.kd_vel * st.d_filtered;
    st.i_set = pi_update(&mut st.integ_vel, cfg.kp_vel, cfg.ki_vel, d_term, err, dt, cfg.i_lim);
    st.i_set
}

/// Restores the sign of the unsigned current sense from an EMA of the
/// commanded voltage, and low-passes the magnitude.
pub fn reconstruct_signed_current(
    cfg: &ControllerConfig,
    st: &mut ControllerState,
    i_raw_abs: f64,
    u_set_prev: f64,
) -> f64 {
    st.ema_u += cfg.ema_u_alpha * (u_set_prev - st.ema_u);
    st.ema_i_abs += cfg.ema_i_alpha * (i_raw_abs.max(0.0) - st.ema_i_abs);
    st.ema_i_abs = st.ema_i_abs.max(0.0);
    let sign = if st.ema_u > 0.0 {
        1.0
    } else if st.ema_u < 0.0 {
        -1.0
    } else {
        0.0
    };
    st.i_signed = sign * st.ema_i_abs;
    st.i_signed
}

/// Current loop.
pub fn tick_current(cfg: &ControllerConfig, st: &mut ControllerState, i_meas_signed: f64, dt: f64) -> f64 {
    let err = st.i_set - i_meas_signed;
    st.last_u_set = pi_update(&mut st.integ_cur, cfg.kp_cur, cfg.ki_cur, 0.0, err, dt, cfg.u_lim);
    st.last_u_set
}

/// One inner-rate tick of the cascade. Outer loops run on every
/// `rate_ratio`-th call starting with the first.
pub fn scheduler_step(cfg: &ControllerConfig, st: &mut ControllerState, meas: &Measurement, dt_inner: f64) -> f64 {
    let ratio = cfg.rate_ratio().max(1);
    if st.tick.is_multiple_of(ratio) {
        let dt_outer = dt_inner * ratio as f64;
        let omega = match meas.omega_raw {
            Some(w) => w,
            None => {
                if let Some(prev) = st.prev_theta {
                    let raw = (meas.theta_raw - prev) / dt_outer;
                    st.omega_est += cfg.omega_filter_alpha * (raw - st.omega_est);
                }
                st.omega_est
            }
        };
        st.prev_theta = Some(meas.theta_raw);
        match cfg.mode {
            ControlMode::Position => {
                tick_position(cfg, st, meas.theta_raw);
                tick_velocity(cfg, st, omega, dt_outer);
            }
            ControlMode::Velocity => {
                tick_velocity(cfg, st, omega, dt_outer);
            }
            ControlMode::Current => {}
        }
        st.outer_ticks += 1;
    }
    st.tick += 1;
    let u_prev = st.last_u_set;
    let i = reconstruct_signed_current(cfg, st, meas.i_raw_abs, u_prev);
    tick_current(cfg, st, i, dt_inner)
}

/// One row of the optional per-tick debug trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebugRow {
    pub t: f64,
    pub theta_set: f64,
    pub theta_raw: f64,
    pub omega_set: f64,
    pub omega_raw: f64,
    pub i_set: f64,
    pub i_signed: f64,
    pub u_set: f64,
}

pub const DEBUG_CSV_HEADER: &str = "t,theta_set,theta_raw,omega_set,omega_raw,i_set,i_signed,u_set";

impl DebugRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t,
            self.theta_set,
            self.theta_raw,
            self.omega_set,
            self.omega_raw,
            self.i_set,
            self.i_signed,
            self.u_set
        )
    }
}

/// A motor, its encoder and current sense, and its controller, stepped at the
/// inner rate.
#[derive(Debug, Clone)]
pub struct ServoLoop {
    pub params: MotorParams,
    pub cfg: ControllerConfig,
    pub ctrl: ControllerState,
    pub motor: MotorState,
    pub cpr: u32,
}

impl ServoLoop {
    pub fn new(params: MotorParams, cfg: ControllerConfig, cpr: u32) -> Self {
        Self { params, cfg, ctrl: ControllerState::default(), motor: MotorState::powered(), cpr }
    }

    pub fn measure(&self) -> Measurement {
        let counts = read_encoder(&self.motor, self.cpr, &self.params);
        Measurement {
            theta_raw: counts_to_angle(counts, self.cpr, &self.params),
            omega_raw: None,
            i_raw_abs: sense_current(&self.motor),
        }
    }

    pub fn theta_raw(&self) -> f64 {
        self.measure().theta_raw
    }

    /// Runs one inner tick against an output load (N mm) and returns the
    /// voltage applied. An unpowered unit is left alone.
    pub fn step(&mut self, load_torque_output: f64) -> f64 {
        let dt = self.cfg.dt_inner();
        if !self.motor.powered {
            self.motor = step_motor(&self.params, &self.motor, 0.0, load_torque_output, dt);
            return 0.0;
        }
        let meas = self.measure();
        let u = scheduler_step(&self.cfg, &mut self.ctrl, &meas, dt);
        self.motor = step_motor(&self.params, &self.motor, u, load_torque_output, dt);
        u
    }

    pub fn debug_row(&self, t: f64) -> DebugRow {
        DebugRow {
            t,
            theta_set: self.ctrl.theta_set,
            theta_raw: self.theta_raw(),
            omega_set: self.ctrl.omega_set,
            omega_raw: self.ctrl.omega_est,
            i_set: self.ctrl.i_set,
            i_signed: self.ctrl.i_signed,
            u_set: self.ctrl.last_u_set,
        }
    }

    /// Cuts power; the worm holds the joint.
    pub fn power_off(&mut self) {
        self.motor.powered = false;
        self.motor.current = 0.0;
        self.motor.rotor_speed = 0.0;
        self.motor.applied_voltage = 0.0;
    }

    /// Re-enables the unit with fresh controller dynamics.
    pub fn power_on(&mut self) {
        if !self.motor.powered {
            self.motor.powered = true;
            self.ctrl.reset_dynamics();
        }
    }
}

/// Summary of a closed-loop position step on an unloaded joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResponse {
    /// Fraction of the step.
    pub overshoot: f64,
    /// First time the joint stays within one encoder count, s.
    pub settle_time: Option<f64>,
    pub final_error: f64,
}

/// Position step from rest, simulated for `duration` seconds.
pub fn position_step_response(
    p: &MotorParams,
    cfg: &ControllerConfig,
    cpr: u32,
    step: f64,
    duration: f64,
) -> StepResponse {
    let mut servo = ServoLoop::new(p.clone(), cfg.clone(), cpr);
    servo.cfg.mode = ControlMode::Position;
    servo.ctrl.theta_set = step;
    let count = counts_to_angle(1, cpr, p);
    let ticks = (duration * cfg.rate_inner).round() as usize;
    let mut peak: f64 = 0.0;
    let mut settle = None;
    for k in 0..ticks {
        servo.step(0.0);
        let th = servo.motor.output_angle;
        peak = peak.max(th * step.signum());
        let within = (servo.theta_raw() - step).abs() <= count;
        match (within, settle) {
            (true, None) => settle = Some((k + 1) as f64 / cfg.rate_inner),
            (false, Some(_)) => settle = None,
            _ => {}
        }
    }
    StepResponse {
        overshoot: ((peak - step.abs()) / step.abs()).max(0.0),
        settle_time: settle,
        final_error: servo.theta_raw() - step,
    }
}

/// Iterative position-gain tuning: starting from the velocity
/// bandwidth, shrink `kp_pos` until a `step` response overshoots by less
/// than `max_overshoot`.
pub fn tune_position_gain(p: &MotorParams, cfg: &ControllerConfig, cpr: u32, step: f64, max_overshoot: f64) -> f64 {
    let mut c = cfg.clone();
    c.kp_pos = VELOCITY_BANDWIDTH;
    for _ in 0..40 {
        let r = position_step_response(p, &c, cpr, step, 3.0 + step.abs() / c.omega_lim);
        if r.overshoot < max_overshoot {
            return c.kp_pos;
        }
        c.kp_pos *= 0.85;
    }
    c.kp_pos
}
