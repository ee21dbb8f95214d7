use serde::{Deserialize, Serialize};

use super::{
    calibrate, characterize_dynamic, characterize_quasistatic, determine_range, quasistatic_profile, simulate_profile,
    CalibrationError, CalibrationModel, CharacterizationRow, CharacterizeError, IndentProfile, SensorModel,
    CALIBRATION_CYCLES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [Finger::Pinky, Finger::Ring, Finger::Middle, Finger::Index, Finger::Thumb];

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }
}

/// Published characterization of one fingertip sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PublishedRow {
    /// N.
    pub range: f64,
    /// hPa.
    pub p0: f64,
    /// hPa/N.
    pub sensitivity: f64,
    /// % of range.
    pub hysteresis: f64,
    /// (mean, sd) error in % of range at 10, 25, 50 and 100 mm/s.
    pub dynamic: [(f64, f64); 4],
    pub quasistatic: (f64, f64),
    pub r_m: f64,
    pub r_s: f64,
    /// Calibration polynomial degree that fitted best.
    pub degree: usize,
}

pub fn published(f: Finger) -> PublishedRow {
    match f {
        Finger::Pinky => PublishedRow {
            range: 4.30,
            p0: 995.0,
            sensitivity: 246.97,
            hysteresis: 2.16,
            dynamic: [(1.06, 0.54), (1.70, 0.63), (2.27, 1.33), (3.67, 2.48)],
            quasistatic: (0.63, 1.65),
            r_m: 14.43,
            r_s: 12.68,
            degree: 1,
        },
        Finger::Ring => PublishedRow {
            range: 4.57,
            p0: 973.0,
            sensitivity: 201.54,
            hysteresis: 2.28,
            dynamic: [(1.41, 0.91), (1.97, 0.91), (2.33, 1.46), (3.59, 2.58)],
            quasistatic: (1.79, 1.50),
            r_m: 15.58,
            r_s: 12.46,
            degree: 1,
        },
        Finger::Middle => PublishedRow {
            range: 3.66,
            p0: 989.0,
            sensitivity: 298.75,
            hysteresis: 2.83,
            dynamic: [(1.36, 0.86), (2.04, 1.04), (2.53, 1.57), (3.99, 2.51)],
            quasistatic: (1.29, 1.63),
            r_m: 15.20,
            r_s: 12.24,
            degree: 1,
        },
        Finger::Index => PublishedRow {
            range: 9.46,
            p0: 1008.0,
            sensitivity: 103.47,
            hysteresis: 2.96,
            dynamic: [(1.49, 0.78), (2.00, 0.94), (2.45, 1.43), (3.89, 2.26)],
            quasistatic: (0.96, 1.54),
            r_m: 13.12,
            r_s: 7.51,
            degree: 2,
        },
        Finger::Thumb => PublishedRow {
            range: 2.32,
            p0: 974.0,
            sensitivity: 462.08,
            hysteresis: 1.75,
            dynamic: [(1.26, 0.76), (1.59, 1.08), (2.44, 1.90), (3.69, 3.28)],
            quasistatic: (1.64, 1.63),
            r_m: 37.99,
            r_s: 15.05,
            degree: 2,
        },
    }
}

/// Phenomenological constants fitted per sensor so the synthetic pipeline
/// reproduces the published row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedConstants {
    pub hysteresis_frac: f64,
    pub drift_per_cycle: f64,
    pub lag_time_constant: f64,
    pub relax_sensor_frac: f64,
    pub relax_mech_frac: f64,
    pub rig_stiffness: f64,
}

/// Fitted with [`fit_constants`].
pub fn fitted(f: Finger) -> FittedConstants {
    match f {
        Finger::Pinky => FittedConstants {
            hysteresis_frac: 0.007855,
            drift_per_cycle: 0.2073,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.1819,
            relax_mech_frac: 0.1976,
            rig_stiffness: 0.09761,
        },
        Finger::Ring => FittedConstants {
            hysteresis_frac: 0.01306,
            drift_per_cycle: 0.2027,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.1846,
            relax_mech_frac: 0.2133,
            rig_stiffness: 0.07225,
        },
        Finger::Middle => FittedConstants {
            hysteresis_frac: 0.01306,
            drift_per_cycle: 0.206,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.1813,
            relax_mech_frac: 0.2081,
            rig_stiffness: 0.09269,
        },
        Finger::Index => FittedConstants {
            hysteresis_frac: 0.01713,
            drift_per_cycle: 0.21,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.1202,
            relax_mech_frac: 0.1796,
            rig_stiffness: 0.1941,
        },
        Finger::Thumb => FittedConstants {
            hysteresis_frac: 0.006198,
            drift_per_cycle: 0.2029,
            lag_time_constant: 0.0,
            relax_sensor_frac: 0.2129,
            relax_mech_frac: 0.5201,
            rig_stiffness: 0.04283,
        },
    }
}

/// Curvature of the quadratic transfer functions, as a share of the slope
/// lost over the range.
const QUADRATIC_BEND: f64 = 0.1;
/// hPa.
pub const DEFAULT_NOISE_STD: f64 = 0.1;
/// s.
pub const DEFAULT_RELAX_TIME_CONSTANT: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorPreset {
    pub finger: Finger,
    pub model: SensorModel,
    pub degree: usize,
}

/// Forward model for a published row and a set of fitted constants.
pub fn build_model(row: &PublishedRow, k: &FittedConstants) -> SensorModel {
    let s = row.sensitivity;
    // a quadratic whose least-squares slope over [0, R] is still s
    let poly_true = if row.degree == 2 {
        vec![s * (1.0 + QUADRATIC_BEND), -QUADRATIC_BEND * s / row.range]
    } else {
        vec![s]
    };
    SensorModel {
        p0: row.p0,
        range: row.range,
        sensitivity_true: s,
        poly_true,
        hysteresis_frac: k.hysteresis_frac,
        drift_per_cycle: k.drift_per_cycle,
        lag_time_constant: k.lag_time_constant,
        relax_sensor_frac: k.relax_sensor_frac,
        relax_mech_frac: k.relax_mech_frac,
        relax_time_constant: DEFAULT_RELAX_TIME_CONSTANT,
        iir_constant: 3.0,
        sample_rate: 100.0,
        noise_std: DEFAULT_NOISE_STD,
        rig_stiffness: k.rig_stiffness,
    }
}

pub fn preset(f: Finger) -> SensorPreset {
    let row = published(f);
    SensorPreset { finger: f, model: build_model(&row, &fitted(f)), degree: row.degree }
}

/// Indentation speeds of the dynamic experiment, mm/s.
pub const DYNAMIC_SPEEDS: [f64; 4] = [10.0, 25.0, 50.0, 100.0];
/// Calibration indentation speed, mm/s.
pub const CALIBRATION_SPEED: f64 = 10.0;

/// 25 cycles to the full range at the calibration speed.
pub fn calibration_trace(m: &SensorModel, seed: u64) -> super::LoadingTrace {
    let profile = IndentProfile::cycles(m.rig_stiffness, m.range, CALIBRATION_SPEED, CALIBRATION_CYCLES, 1.0);
    simulate_profile(m, &profile, seed)
}

/// Five cycles to the full range at `speed`.
pub fn dynamic_trace(m: &SensorModel, speed: f64, seed: u64) -> super::LoadingTrace {
    simulate_profile(m, &IndentProfile::cycles(m.rig_stiffness, m.range, speed, 5, 1.0), seed)
}

/// Fast load to 80 % of range, two 20 s dwells.
pub fn quasistatic_trace(m: &SensorModel, seed: u64) -> super::LoadingTrace {
    simulate_profile(m, &quasistatic_profile(m, 0.8, 300.0, 20.0, 20.0), seed)
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Characterize(#[from] CharacterizeError),
}

/// The full synthetic characterization of one sensor: calibration,
/// dynamic accuracy and quasi-static relaxation.
pub fn characterize_model(
    name: &str,
    m: &SensorModel,
    degree: usize,
    seed: u64,
) -> Result<(CalibrationModel, CharacterizationRow), PipelineError> {
    let cal = calibrate(&calibration_trace(m, seed), degree)?;
    let traces: Vec<_> = DYNAMIC_SPEEDS
        .iter()
        .enumerate()
        .map(|(i, &v)| dynamic_trace(m, v, seed.wrapping_add(1 + i as u64)))
        .collect();
    let dynamic = characterize_dynamic(&cal, &traces);
    let quasistatic = characterize_quasistatic(&cal, &quasistatic_trace(m, seed.wrapping_add(10)))?;
    let row = CharacterizationRow {
        name: name.to_string(),
        range: cal.range_est,
        p0: cal.p0_est,
        sensitivity: cal.sensitivity_est,
        hysteresis: 100.0 * cal.hysteresis_frac,
        r_squared: cal.r_squared,
        drift: 100.0 * cal.drift_frac,
        dynamic,
        quasistatic,
    };
    Ok((cal, row))
}

pub fn characterize_preset(p: &SensorPreset, seed: u64) -> Result<(CalibrationModel, CharacterizationRow), PipelineError> {
    characterize_model(p.finger.name(), &p.model, p.degree, seed)
}

/// Saturation staircase with the published step sizes (0.01 mm, then 0.1 mm).
pub fn preset_range(p: &SensorPreset, seed: u64) -> super::RangeResult {
    determine_range(&p.model, 0.01, 0.1, seed)
}

/// Zero-value drift the fitting aims for, as a fraction of the zero value.
pub const TARGET_DRIFT: f64 = 0.005;

/// Fits the phenomenological constants of one sensor to its published row:
/// drift in closed form, then repeated one-dimensional corrections of the
/// rig stiffness (velocity dependence of the error), the hysteresis loop
/// width and the two relaxation shares.
pub fn fit_constants(f: Finger, seed: u64) -> FittedConstants {
    let row = published(f);
    let mut k = fitted(f);
    k.drift_per_cycle = TARGET_DRIFT * row.p0 / (CALIBRATION_CYCLES as f64 - 1.0);
    for _ in 0..12 {
        // error growth from 10 to 100 mm/s is dominated by read-out lag
        let m = build_model(&row, &k);
        let Ok((_, got)) = characterize_model(f.name(), &m, row.degree, seed) else { break };
        let want_growth = row.dynamic[3].0 - row.dynamic[0].0;
        let got_growth = got.dynamic[3].delta_f - got.dynamic[0].delta_f;
        if got_growth > 0.0 {
            k.rig_stiffness *= (want_growth / got_growth).clamp(0.5, 2.0);
        }
        let h_gain = (row.hysteresis / got.hysteresis.max(1e-6)).clamp(0.5, 2.0);
        k.hysteresis_frac *= h_gain;
        let q = got.quasistatic;
        if q.r_m > 0.0 {
            k.relax_mech_frac = (k.relax_mech_frac * row.r_m / q.r_m).min(0.9);
        }
        if q.r_s > 0.0 {
            k.relax_sensor_frac = (k.relax_sensor_frac * row.r_s / q.r_s).min(0.9);
        }
    }
    k
}
