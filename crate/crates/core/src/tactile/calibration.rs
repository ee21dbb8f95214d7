use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LoadingTrace, TraceError};

/// Number of loading/unloading cycles in a calibration run.
pub const CALIBRATION_CYCLES: usize = 25;

/// Fitted inverse transfer function of one taxel and its static metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub degree: usize,
    /// Force (N) as a polynomial in `p - p0_est` (hPa), ascending powers,
    /// constant term first.
    pub poly_inverse: Vec<f64>,
    pub r_squared: f64,
    /// hPa.
    pub p0_est: f64,
    /// N.
    pub range_est: f64,
    /// Slope of the linear pressure-over-force fit, hPa/N.
    pub sensitivity_est: f64,
    /// N.
    pub hysteresis_abs: f64,
    pub hysteresis_frac: f64,
    /// Zero-value change between the first and last cycle over the first.
    pub drift_frac: f64,
    /// Calibrated pressure span, hPa.
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("expected {expected} loading cycles, found {found}")]
    CycleSegmentation { expected: usize, found: usize },
    #[error("pressure span {span:.3} hPa is below ten times the noise level {noise:.3} hPa")]
    IllConditioned { span: f64, noise: f64 },
    #[error("polynomial degree must be 1 or 2")]
    Degree,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Least-squares polynomial fit `y ~ sum c_k x^k`, returning ascending
/// coefficients and R^2.
pub fn fit_polynomial(x: &[f64], y: &[f64], degree: usize) -> (Vec<f64>, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(n, degree + 1, |i, j| (x[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&b, 1e-12).expect("SVD with both factors computed");
    let coeffs: Vec<f64> = sol.iter().enumerate().map(|(j, c)| c / scale.powi(j as i32)).collect();
    let fitted = &a * &sol;
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (coeffs, r2)
}

pub fn eval_polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Sample index ranges of one loading/unloading cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cycle {
    /// Last zero-force sample before the force rises.
    pub start: usize,
    pub peak: usize,
    /// First zero-force sample after the force falls, or the trace end.
    pub end: usize,
}

/// Splits a trace into loading/unloading cycles. Turning points are taken
/// where the force reverses by more than 2 % of its overall peak.
pub fn segment_cycles(force: &[f64]) -> Vec<Cycle> {
    let peak_force = force.iter().cloned().fold(0.0, f64::max);
    if force.is_empty() || peak_force <= 0.0 {
        return Vec::new();
    }
    let band = 0.02 * peak_force;
    let zero = 1e-3 * peak_force;
    let mut peaks = Vec::new();
    let mut rising = false;
    let mut lo = force[0];
    let mut hi = force[0];
    let mut hi_idx = 0;
    for (k, &f) in force.iter().enumerate() {
        if rising {
            if f > hi {
                hi = f;
                hi_idx = k;
            }
            if f < hi - band {
                peaks.push(hi_idx);
                rising = false;
                lo = f;
            }
        } else {
            lo = lo.min(f);
            if f > lo + band {
                rising = true;
                hi = f;
                hi_idx = k;
            }
        }
    }
    if rising && hi_idx + 1 < force.len() && force[force.len() - 1] < hi - band {
        peaks.push(hi_idx);
    }
    let mut cycles = Vec::with_capacity(peaks.len());
    let mut floor = 0;
    for &pk in &peaks {
        let mut start = pk;
        while start > floor && force[start] > zero {
            start -= 1;
        }
        let mut end = pk;
        while end + 1 < force.len() && force[end] > zero {
            end += 1;
        }
        cycles.push(Cycle { start, peak: pk, end });
        floor = end;
    }
    cycles
}

/// Mean and standard deviation of the rest samples just before `cycle`.
fn rest_stats(trace: &LoadingTrace, cycle: &Cycle, floor: usize, zero: f64) -> Option<(f64, f64)> {
    let mut vals = Vec::new();
    let mut k = cycle.start as isize;
    while k >= floor as isize && vals.len() < 50 {
        let i = k as usize;
        if trace.reference_force[i] > zero {
            break;
        }
        vals.push(trace.pressure[i]);
        k -= 1;
    }
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Pressure where the force first crosses `level` within `range`, linearly
/// interpolated between samples.
fn crossing(trace: &LoadingTrace, range: std::ops::Range<usize>, level: f64, rising: bool) -> Option<f64> {
    let f = &trace.reference_force;
    let p = &trace.pressure;
    for k in range.start.max(1)..range.end {
        let (a, b) = (f[k - 1], f[k]);
        let hit = if rising { a < level && b >= level } else { a > level && b <= level };
        if hit {
            let w = (level - a) / (b - a);
            return Some(p[k - 1] + w * (p[k] - p[k - 1]));
        }
    }
    None
}

/// Fits a calibration from a run of exactly [`CALIBRATION_CYCLES`] cycles.
pub fn calibrate(trace: &LoadingTrace, degree: usize) -> Result<CalibrationModel, CalibrationError> {
    calibrate_cycles(trace, degree, CALIBRATION_CYCLES)
}

pub fn calibrate_cycles(
    trace: &LoadingTrace,
    degree: usize,
    expected: usize,
) -> Result<CalibrationModel, CalibrationError> {
    if !(1..=2).contains(&degree) {
        return Err(CalibrationError::Degree);
    }
    trace.check()?;
    let cycles = segment_cycles(&trace.reference_force);
    if cycles.len() != expected {
        return Err(CalibrationError::CycleSegmentation { expected, found: cycles.len() });
    }
    let peak_force = trace.reference_force.iter().cloned().fold(0.0, f64::max);
    let zero = 1e-3 * peak_force;

    let mut zero_values = Vec::with_capacity(cycles.len());
    let mut noise = 0.0;
    let mut floor = 0;
    for (i, c) in cycles.iter().enumerate() {
        if let Some((mean, sd)) = rest_stats(trace, c, floor, zero) {
            zero_values.push(mean);
            if i == 0 {
                noise = sd;
            }
        } else {
            // no rest: fall back to the first sample of the cycle
            zero_values.push(trace.pressure[c.start]);
        }
        floor = c.end;
    }
    let p0_est = zero_values[0];

    let mut f = Vec::new();
    let mut p = Vec::new();
    for c in &cycles {
        for k in c.start..=c.end {
            f.push(trace.reference_force[k]);
            p.push(trace.pressure[k]);
        }
    }
    let p_min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = p_max - p_min;
    if !(span > 10.0 * noise) || span <= 0.0 {
        return Err(CalibrationError::IllConditioned { span, noise });
    }

    let (forward, _) = fit_polynomial(&f, &p, 1);
    let sensitivity_est = forward[1];

    let dp: Vec<f64> = p.iter().map(|v| v - p0_est).collect();
    let (poly_inverse, r_squared) = fit_polynomial(&dp, &f, degree);

    let range_est = cycles.iter().map(|c| trace.reference_force[c.peak]).sum::<f64>() / cycles.len() as f64;

    let last = cycles[cycles.len() - 1];
    let half = 0.5 * range_est;
    let est = |pressure: f64| eval_polynomial(&poly_inverse, pressure - p0_est);
    let hysteresis_abs = match (
        crossing(trace, last.start..last.peak + 1, half, true),
        crossing(trace, last.peak..last.end + 1, half, false),
    ) {
        (Some(up), Some(down)) => (est(up) - est(down)).abs(),
        _ => 0.0,
    };
    let drift_frac = (zero_values[zero_values.len() - 1] - zero_values[0]).abs() / zero_values[0];

    Ok(CalibrationModel {
        degree,
        poly_inverse,
        r_squared,
        p0_est,
        range_est,
        sensitivity_est,
        hysteresis_abs,
        hysteresis_frac: hysteresis_abs / range_est,
        drift_frac,
        p_min,
        p_max,
    })
}

/// Force reading with a flag for pressures outside the calibrated span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceEstimate {
    /// N.
    pub force: f64,
    pub extrapolated: bool,
}

/// Applies the inverse transfer function, clamped to `[0, range_est]`.
pub fn estimate_force(c: &CalibrationModel, pressure: f64) -> ForceEstimate {
    let raw = eval_polynomial(&c.poly_inverse, pressure - c.p0_est);
    let force = if raw.is_finite() { raw.clamp(0.0, c.range_est) } else { 0.0 };
    ForceEstimate { force, extrapolated: pressure < c.p_min || pressure > c.p_max }
}
