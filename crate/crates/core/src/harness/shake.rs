/// Horizontal shake imposed by the arm: back-and-forth strokes, each a
/// jerk-limited accelerate/decelerate pair. Every acceleration lobe ramps for
/// a quarter of its duration, holds for half and ramps down for a quarter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShakeProfile {
    /// m/s.
    pub v_peak: f64,
    /// Travel of one stroke, m.
    pub stroke: f64,
    pub cycles: u32,
}

impl ShakeProfile {
    pub fn new(v_peak: f64, stroke: f64, cycles: u32) -> Self {
        Self { v_peak, stroke, cycles }
    }

    /// Duration of one acceleration lobe, s.
    fn lobe_time(&self) -> f64 {
        self.stroke / self.v_peak
    }

    /// m/s^2.
    pub fn peak_accel(&self) -> f64 {
        4.0 * self.v_peak * self.v_peak / (3.0 * self.stroke)
    }

    /// One cycle is a forward and a return stroke, s.
    pub fn cycle_time(&self) -> f64 {
        4.0 * self.lobe_time()
    }

    pub fn duration(&self) -> f64 {
        self.cycles as f64 * self.cycle_time()
    }

    /// Acceleration at `t` seconds after the start, m/s^2.
    pub fn accel(&self, t: f64) -> f64 {
        if !(t >= 0.0 && t < self.duration()) {
            return 0.0;
        }
        let ta = self.lobe_time();
        let lobe = (t / ta).floor();
        let tau = (t - lobe * ta) / ta;
        let shape = if tau < 0.25 {
            tau / 0.25
        } else if tau < 0.75 {
            1.0
        } else {
            (1.0 - tau) / 0.25
        };
        // lobes within a cycle: +, -, -, +
        let sign = match lobe as u64 % 4 {
            0 | 3 => 1.0,
            _ => -1.0,
        };
        sign * shape * self.peak_accel()
    }
}
