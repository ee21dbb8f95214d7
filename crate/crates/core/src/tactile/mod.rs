//! Barometric taxel: a forward model of a MEMS barometer cast in silicone and
//! the calibration and characterization pipeline built on top of it.
//!
//! The forward chain, evaluated at an internal 1 kHz rate:
//! indenter force -> dwell relaxation -> first-order lag -> saturation ->
//! play-operator hysteresis -> transfer polynomial + drift -> barometer IIR
//! at the read-out rate -> additive Gaussian noise.

mod calibration;
mod characterize;
mod presets;

pub use calibration::*;
pub use characterize::*;
pub use presets::*;

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Internal integration rate of the forward model, Hz.
pub const MODEL_RATE: f64 = 1000.0;
/// How long the indenter must hold still before the silicone starts to
/// relax, s.
pub const DWELL_ONSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    /// Reading at zero force, hPa.
    pub p0: f64,
    /// Saturation force R, N.
    pub range: f64,
    /// Nominal linear sensitivity, hPa/N.
    pub sensitivity_true: f64,
    /// Force -> pressure-rise polynomial without constant term:
    /// `dp = c[0] F + c[1] F^2`.
    pub poly_true: Vec<f64>,
    /// Loop width at half range as a fraction of range.
    pub hysteresis_frac: f64,
    /// Zero-value shift per full-range loading/unloading cycle, hPa.
    pub drift_per_cycle: f64,
    /// s.
    pub lag_time_constant: f64,
    /// Share of the held force the sensor reading loses in a long dwell.
    pub relax_sensor_frac: f64,
    /// Share of the held force the silicone loses in a long dwell.
    pub relax_mech_frac: f64,
    /// s.
    pub relax_time_constant: f64,
    pub iir_constant: f64,
    /// Read-out rate, Hz.
    pub sample_rate: f64,
    /// hPa.
    pub noise_std: f64,
    /// Force per mm of indentation of the test rig, N/mm.
    pub rig_stiffness: f64,
}

impl SensorModel {
    /// A plain linear taxel with no dynamics, noise or drift.
    pub fn ideal_linear(p0: f64, sensitivity: f64, range: f64) -> Self {
        Self {
            p0,
            range,
            sensitivity_true: sensitivity,
            poly_true: vec![sensitivity],
            hysteresis_frac: 0.0,
            drift_per_cycle: 0.0,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.0,
            relax_mech_frac: 0.0,
            relax_time_constant: 8.0,
            iir_constant: 0.0,
            sample_rate: 100.0,
            noise_std: 0.0,
            rig_stiffness: 0.05,
        }
    }

    /// Pressure rise of the transfer polynomial at force `f`.
    pub fn transfer(&self, f: f64) -> f64 {
        self.poly_true.iter().enumerate().map(|(k, c)| c * f.powi(k as i32 + 1)).sum()
    }

    /// Noiseless steady-state reading for a slowly applied force.
    pub fn static_pressure(&self, f: f64) -> f64 {
        self.p0 + self.transfer(f.clamp(0.0, self.range))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.range > 0.0) {
            return Err("range must be positive".into());
        }
        if !(900.0..=1100.0).contains(&self.p0) {
            return Err(format!("zero value {} hPa is not near ambient", self.p0));
        }
        if self.poly_true.is_empty() || self.poly_true.len() > 2 {
            return Err("transfer polynomial must have degree 1 or 2".into());
        }
        if self.iir_constant < 0.0 || self.sample_rate <= 0.0 || self.noise_std < 0.0 {
            return Err("read-out parameters out of range".into());
        }
        if !(self.rig_stiffness > 0.0) {
            return Err("rig stiffness must be positive".into());
        }
        Ok(())
    }
}

/// Sampled loading experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadingTrace {
    /// s.
    pub timestamps: Vec<f64>,
    /// Ground-truth normal force, N.
    pub reference_force: Vec<f64>,
    /// hPa.
    pub pressure: Vec<f64>,
    /// Indenter speed, mm/s.
    pub velocity_label: Vec<f64>,
}

pub const TRACE_CSV_HEADER: &str = "t_s,f_ref_N,p_hPa,v_label_mm_s";

impl LoadingTrace {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn push(&mut self, t: f64, f: f64, p: f64, v: f64) {
        self.timestamps.push(t);
        self.reference_force.push(f);
        self.pressure.push(p);
        self.velocity_label.push(v);
    }

    /// Concatenates `other` after this trace, shifting its clock.
    pub fn append(&mut self, other: &LoadingTrace) {
        let offset = self.timestamps.last().map(|t| t + 1.0 / 100.0).unwrap_or(0.0);
        for k in 0..other.len() {
            self.push(
                other.timestamps[k] - other.timestamps[0] + offset,
                other.reference_force[k],
                other.pressure[k],
                other.velocity_label[k],
            );
        }
    }

    pub fn check(&self) -> Result<(), TraceError> {
        let n = self.timestamps.len();
        if self.reference_force.len() != n || self.pressure.len() != n || self.velocity_label.len() != n {
            return Err(TraceError::Lengths);
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TraceError::NonMonotone);
        }
        Ok(())
    }

    /// Writes the trace as CSV with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.timestamps[k], self.reference_force[k], self.pressure[k], self.velocity_label[k]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut trace = LoadingTrace::default();
        let mut lines = r.lines();
        let header = lines.next().ok_or(TraceError::Header)?.map_err(|e| TraceError::Io(e.to_string()))?;
        if header.trim() != TRACE_CSV_HEADER {
            return Err(TraceError::Header);
        }
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| TraceError::Row(n + 2))?;
            if vals.len() != 4 {
                return Err(TraceError::Row(n + 2));
            }
            trace.push(vals[0], vals[1], vals[2], vals[3]);
        }
        trace.check()?;
        Ok(trace)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("trace columns have different lengths")]
    Lengths,
    #[error("timestamps are not strictly increasing")]
    NonMonotone,
    #[error("missing or unexpected CSV header")]
    Header,
    #[error("malformed CSV row {0}")]
    Row(usize),
    #[error("read failed: {0}")]
    Io(String),
}

/// Step-by-step forward model of one taxel.
#[derive(Debug, Clone)]
pub struct TaxelSim {
    pub model: SensorModel,
    /// Relaxed share of the silicone force.
    relax_mech: f64,
    /// Relaxed share of the force seen by the barometer.
    relax_sensor: f64,
    lagged: f64,
    play: f64,
    drift: f64,
    last_clamped: f64,
    last_input: Option<f64>,
    still_for: f64,
    iir: Option<f64>,
    steps: u64,
    steps_per_sample: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    reading: f64,
    reference: f64,
}

impl TaxelSim {
    pub fn new(model: SensorModel, seed: u64) -> Self {
        let steps_per_sample = (MODEL_RATE / model.sample_rate).round().max(1.0) as u64;
        let noise = (model.noise_std > 0.0).then(|| Normal::new(0.0, model.noise_std).unwrap());
        let reading = model.p0;
        Self {
            model,
            relax_mech: 0.0,
            relax_sensor: 0.0,
            lagged: 0.0,
            play: 0.0,
            drift: 0.0,
            last_clamped: 0.0,
            last_input: None,
            still_for: 0.0,
            iir: None,
            steps: 0,
            steps_per_sample,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            reading,
            reference: 0.0,
        }
    }

    /// Half width of the play operator, N.
    fn play_half_width(&self) -> f64 {
        0.01 * self.model.range
    }

    /// Advances one internal step with indenter force `f_e` (the elastic
    /// force before any relaxation). Returns `Some(pressure)` on read-out
    /// steps.
    pub fn step(&mut self, f_e: f64) -> Option<f64> {
        let m = &self.model;
        let dt = 1.0 / MODEL_RATE;
        let f_e = f_e.max(0.0);

        // relaxation only acts once the indenter has held still for a while
        let moved = match self.last_input {
            Some(prev) => (f_e - prev).abs() > 1e-9 * m.range.max(1.0),
            None => false,
        };
        self.last_input = Some(f_e);
        self.still_for = if moved { 0.0 } else { self.still_for + dt };
        let relax_w = 1.0 - (-dt / m.relax_time_constant).exp();
        if f_e <= 0.0 {
            self.relax_mech += relax_w * (0.0 - self.relax_mech);
            self.relax_sensor += relax_w * (0.0 - self.relax_sensor);
        } else if self.still_for > DWELL_ONSET {
            self.relax_mech += relax_w * (m.relax_mech_frac - self.relax_mech);
            self.relax_sensor += relax_w * (m.relax_sensor_frac - self.relax_sensor);
        }
        self.reference = f_e * (1.0 - self.relax_mech);
        let f_sensor = f_e * (1.0 - self.relax_sensor);

        if m.lag_time_constant > 0.0 {
            self.lagged += (1.0 - (-dt / m.lag_time_constant).exp()) * (f_sensor - self.lagged);
        } else {
            self.lagged = f_sensor;
        }
        let clamped = self.lagged.clamp(0.0, m.range);

        let hw = self.play_half_width();
        if clamped > self.play + hw {
            self.play = clamped - hw;
        } else if clamped < self.play - hw {
            self.play = clamped + hw;
        }
        let direction = if hw > 0.0 { ((clamped - self.play) / hw).clamp(-1.0, 1.0) } else { 0.0 };
        let shape = 4.0 * clamped * (m.range - clamped) / (m.range * m.range);
        let f_hyst = clamped - direction * 0.5 * m.hysteresis_frac * m.range * shape;

        self.drift += m.drift_per_cycle * (clamped - self.last_clamped).abs() / (2.0 * m.range);
        self.last_clamped = clamped;

        let x = m.p0 + self.drift + m.transfer(f_hyst);
        self.steps += 1;
        if !(self.steps - 1).is_multiple_of(self.steps_per_sample) {
            return None;
        }
        let c = m.iir_constant;
        let y = match self.iir {
            Some(y) => (y * c + x) / (c + 1.0),
            None => x,
        };
        self.iir = Some(y);
        let noise = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        self.reading = y + noise;
        Some(self.reading)
    }

    /// Latest read-out, hPa.
    pub fn reading(&self) -> f64 {
        self.reading
    }

    /// Ground-truth force after mechanical relaxation, N.
    pub fn reference_force(&self) -> f64 {
        self.reference
    }
}

/// Runs the forward model under the elastic indenter force `force_fn(t)`
/// for `duration` seconds and samples it at the read-out rate.
pub fn simulate_sensor<F: Fn(f64) -> f64>(m: &SensorModel, force_fn: F, duration: f64, seed: u64) -> LoadingTrace {
    simulate_labelled(m, |t| (force_fn(t), 0.0), duration, seed)
}

fn simulate_labelled<F: Fn(f64) -> (f64, f64)>(m: &SensorModel, f: F, duration: f64, seed: u64) -> LoadingTrace {
    let mut sim = TaxelSim::new(m.clone(), seed);
    let steps = (duration * MODEL_RATE).round() as u64;
    let mut trace = LoadingTrace::default();
    for k in 0..steps {
        let t = k as f64 / MODEL_RATE;
        let (fe, v) = f(t);
        if let Some(p) = sim.step(fe) {
            trace.push(t, sim.reference_force(), p, v);
        }
    }
    trace
}

/// Piecewise-linear indenter motion: a list of (duration s, end
/// indentation mm) legs starting from zero indentation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndentProfile {
    pub legs: Vec<(f64, f64)>,
}

impl IndentProfile {
    pub fn new() -> Self {
        Self::default()
    }

    fn end(&self) -> f64 {
        self.legs.last().map(|l| l.1).unwrap_or(0.0)
    }

    /// Moves to `target` mm at `speed` mm/s.
    pub fn move_to(mut self, target: f64, speed: f64) -> Self {
        let d = (target - self.end()).abs();
        if d > 0.0 {
            self.legs.push((d / speed, target));
        }
        self
    }

    pub fn hold(mut self, duration: f64) -> Self {
        let end = self.end();
        self.legs.push((duration, end));
        self
    }

    pub fn duration(&self) -> f64 {
        self.legs.iter().map(|l| l.0).sum()
    }

    /// Indentation (mm) and signed speed (mm/s) at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let mut start_t = 0.0;
        let mut start_x = 0.0;
        for &(dur, end) in &self.legs {
            if t < start_t + dur {
                let v = (end - start_x) / dur;
                return (start_x + v * (t - start_t), v);
            }
            start_t += dur;
            start_x = end;
        }
        (start_x, 0.0)
    }

    /// `cycles` triangular loading/unloading cycles to `peak_force` at
    /// `speed`, each preceded by a rest of `rest` seconds, ending with a rest.
    pub fn cycles(rig_stiffness: f64, peak_force: f64, speed: f64, cycles: usize, rest: f64) -> Self {
        let depth = peak_force / rig_stiffness;
        let mut p = Self::new();
        for _ in 0..cycles {
            p = p.hold(rest).move_to(depth, speed).move_to(0.0, speed);
        }
        p.hold(rest)
    }
}

/// Simulates an indentation profile, labelling samples with the indenter
/// speed.
pub fn simulate_profile(m: &SensorModel, profile: &IndentProfile, seed: u64) -> LoadingTrace {
    let k = m.rig_stiffness;
    simulate_labelled(
        m,
        |t| {
            let (x, v) = profile.at(t);
            (k * x.max(0.0), v.abs())
        },
        profile.duration(),
        seed,
    )
}
