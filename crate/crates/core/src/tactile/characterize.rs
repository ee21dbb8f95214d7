use serde::Serialize;

use super::{estimate_force, segment_cycles, simulate_profile, CalibrationModel, IndentProfile, LoadingTrace, SensorModel};

/// Mean absolute force error and its standard deviation, both in % of range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    /// mm/s.
    pub velocity: f64,
    pub delta_f: f64,
    pub sigma: f64,
}

/// Force error statistics over the sample indices `idx`.
pub fn accuracy_over(c: &CalibrationModel, trace: &LoadingTrace, idx: impl Iterator<Item = usize>) -> (f64, f64) {
    let errs: Vec<f64> = idx
        .map(|k| (estimate_force(c, trace.pressure[k]).force - trace.reference_force[k]).abs())
        .collect();
    if errs.is_empty() {
        return (0.0, 0.0);
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    (100.0 * mean / c.range_est, 100.0 * var.sqrt() / c.range_est)
}

/// Accuracy over the loading/unloading part of each trace (from the start of
/// the first cycle to the end of the last).
pub fn characterize_dynamic(c: &CalibrationModel, traces: &[LoadingTrace]) -> Vec<Accuracy> {
    traces
        .iter()
        .map(|tr| {
            let cycles = segment_cycles(&tr.reference_force);
            let (lo, hi) = match (cycles.first(), cycles.last()) {
                (Some(a), Some(b)) => (a.start, b.end),
                _ => (0, tr.len().saturating_sub(1)),
            };
            let (delta_f, sigma) = accuracy_over(c, tr, lo..=hi);
            let velocity = tr.velocity_label.iter().cloned().fold(0.0, f64::max);
            Accuracy { velocity, delta_f, sigma }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuasiStatic {
    /// % of range.
    pub delta_f: f64,
    pub sigma: f64,
    /// Drop of the reference force over the loaded dwell, % of range.
    pub r_m: f64,
    /// Drop of the estimated force over the loaded dwell, % of range.
    pub r_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CharacterizeError {
    #[error("no loaded dwell of at least {0} s found")]
    DwellNotFound(f64),
}

/// Shortest loaded hold accepted as a dwell, s.
const MIN_DWELL: f64 = 5.0;

/// First run of stationary samples (velocity label zero) under load lasting
/// at least [`MIN_DWELL`].
fn loaded_dwell(trace: &LoadingTrace) -> Option<(usize, usize)> {
    let peak = trace.reference_force.iter().cloned().fold(0.0, f64::max);
    let mut k = 0;
    while k < trace.len() {
        if trace.velocity_label[k] == 0.0 && trace.reference_force[k] > 0.1 * peak {
            let start = k;
            while k + 1 < trace.len() && trace.velocity_label[k + 1] == 0.0 {
                k += 1;
            }
            if trace.timestamps[k] - trace.timestamps[start] >= MIN_DWELL {
                return Some((start, k));
            }
        }
        k += 1;
    }
    None
}

/// Relaxation and accuracy of a load/dwell/unload/dwell trace.
///
/// The start of the dwell is taken as the highest value of each signal in
/// its first second, so the read-out lag does not count as relaxation.
pub fn characterize_quasistatic(c: &CalibrationModel, trace: &LoadingTrace) -> Result<QuasiStatic, CharacterizeError> {
    let (start, end) = loaded_dwell(trace).ok_or(CharacterizeError::DwellNotFound(MIN_DWELL))?;
    let t0 = trace.timestamps[start];
    let head = (start..=end).take_while(|&k| trace.timestamps[k] - t0 <= 1.0);
    let est = |k: usize| estimate_force(c, trace.pressure[k]).force;
    let (mut f_start, mut e_start) = (f64::MIN, f64::MIN);
    for k in head {
        f_start = f_start.max(trace.reference_force[k]);
        e_start = e_start.max(est(k));
    }
    let r_m = 100.0 * (f_start - trace.reference_force[end]) / c.range_est;
    let r_s = 100.0 * (e_start - est(end)) / c.range_est;
    let (delta_f, sigma) = accuracy_over(c, trace, 0..trace.len());
    Ok(QuasiStatic { delta_f, sigma, r_m, r_s })
}

/// Load to `frac` of range at `speed`, dwell `t1`, unload, dwell `t2`.
pub fn quasistatic_profile(m: &SensorModel, frac: f64, speed: f64, t1: f64, t2: f64) -> IndentProfile {
    IndentProfile::new()
        .hold(1.0)
        .move_to(frac * m.range / m.rig_stiffness, speed)
        .hold(t1)
        .move_to(0.0, speed)
        .hold(t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeResult {
    /// Smallest force that moves the reading beyond three noise deviations, N.
    pub threshold: f64,
    /// Force at the saturation knee, N.
    pub range: f64,
    /// Slope of the unsaturated staircase, hPa/N.
    pub sensitivity: f64,
    /// False when the knee was not reached; `range` is then the largest
    /// force tested.
    pub saturated: bool,
}

/// Hold time per staircase level, s.
pub const STAIR_HOLD: f64 = 0.3;

/// Time taken by each staircase step, s.
pub const STAIR_MOVE: f64 = 0.02;

/// Staircase indentation: fine steps up to ten coarse steps deep, then
/// coarse steps to `max_depth`. Each level is held for [`STAIR_HOLD`].
pub fn staircase_profile(step_fine: f64, step_coarse: f64, max_depth: f64) -> IndentProfile {
    let mut p = IndentProfile::new().hold(1.0);
    let mut x = 0.0;
    let fine_until = 10.0 * step_coarse;
    while x < max_depth - 1e-12 {
        let step = if x < fine_until - 1e-12 { step_fine } else { step_coarse };
        x += step;
        p = p.move_to(x, step / STAIR_MOVE).hold(STAIR_HOLD);
    }
    p
}

/// Mean force and pressure over the settled second half of each stationary
/// run of a staircase trace (the first run is the zero-force baseline).
pub fn staircase_levels(trace: &LoadingTrace) -> Vec<(f64, f64, Vec<f64>)> {
    let mut levels = Vec::new();
    let mut k = 0;
    while k < trace.len() {
        if trace.velocity_label[k] == 0.0 {
            let start = k;
            while k + 1 < trace.len() && trace.velocity_label[k + 1] == 0.0 {
                k += 1;
            }
            let settled = start + (k - start) / 2;
            let n = (k + 1 - settled) as f64;
            let f = trace.reference_force[settled..=k].iter().sum::<f64>() / n;
            let samples = trace.pressure[settled..=k].to_vec();
            let p = samples.iter().sum::<f64>() / n;
            levels.push((f, p, samples));
        }
        k += 1;
    }
    levels
}

/// Detection threshold and saturation knee of a staircase trace.
pub fn analyze_staircase(trace: &LoadingTrace) -> RangeResult {
    let levels = staircase_levels(trace);
    let (_, base_p, base_samples) = &levels[0];
    let n = base_samples.len() as f64;
    let noise = (base_samples.iter().map(|p| (p - base_p).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = levels
        .iter()
        .skip(1)
        .find(|(_, p, _)| (p - base_p).abs() > 3.0 * noise)
        .map(|l| l.0)
        .unwrap_or(f64::NAN);

    let w = 5;
    let slope = |i: usize| (levels[i + w].1 - levels[i].1) / (levels[i + w].0 - levels[i].0);
    let last = levels.len().saturating_sub(w);
    // reference slope from the first tenth of the levels
    let lead = (last / 10).max(2).min(last);
    let xs: Vec<f64> = levels[..lead + w].iter().map(|l| l.0).collect();
    let ys: Vec<f64> = levels[..lead + w].iter().map(|l| l.1).collect();
    let sensitivity = super::fit_polynomial(&xs, &ys, 1).0[1];
    for i in 1..last {
        if slope(i) < 0.05 * sensitivity {
            return RangeResult { threshold, range: levels[i].0, sensitivity, saturated: true };
        }
    }
    let max_f = levels.iter().map(|l| l.0).fold(0.0, f64::max);
    RangeResult { threshold, range: max_f, sensitivity, saturated: false }
}

/// Runs the staircase on the forward model up to twice its nominal range.
pub fn determine_range(m: &SensorModel, step_fine: f64, step_coarse: f64, seed: u64) -> RangeResult {
    let depth = 2.0 * m.range / m.rig_stiffness;
    let trace = simulate_profile(m, &staircase_profile(step_fine, step_coarse, depth), seed);
    analyze_staircase(&trace)
}

/// One row of the sensor characterization report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizationRow {
    pub name: String,
    pub range: f64,
    pub p0: f64,
    pub sensitivity: f64,
    /// % of range.
    pub hysteresis: f64,
    pub r_squared: f64,
    /// % of zero value.
    pub drift: f64,
    pub dynamic: Vec<Accuracy>,
    pub quasistatic: QuasiStatic,
}

pub const REPORT_CSV_HEADER: &str = "sensor,R_N,P0_hPa,s_hPa_per_N,h_pct,dF10,sd10,dF25,sd25,dF50,sd50,dF100,sd100,dFqs,sdqs,r_m,r_s,r2,drift_pct";

impl CharacterizationRow {
    pub fn csv(&self) -> String {
        let mut cols = vec![
            self.name.clone(),
            format!("{:.2}", self.range),
            format!("{:.2}", self.p0),
            format!("{:.2}", self.sensitivity),
            format!("{:.2}", self.hysteresis),
        ];
        for a in &self.dynamic {
            cols.push(format!("{:.2}", a.delta_f));
            cols.push(format!("{:.2}", a.sigma));
        }
        let q = &self.quasistatic;
        for v in [q.delta_f, q.sigma, q.r_m, q.r_s] {
            cols.push(format!("{v:.2}"));
        }
        cols.push(format!("{:.4}", self.r_squared));
        cols.push(format!("{:.3}", self.drift));
        cols.join(",")
    }
}
