//! Coarse-grained mean-field feedback: the `d<I_z>/dt` rate curve, its fixed
//! points and capture basins, and fixed-step trajectories.
//!
//! Rates are in spins per microsecond; trajectory times are in microseconds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gates::NS_TO_US;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalParams {
    /// Sensing coupling (MHz).
    pub a0: f64,
    /// Flip-flop coupling (MHz).
    pub a_ff: f64,
    /// Sensing time (ns).
    pub tau: f64,
    /// Nuclear diffusion rate (Hz).
    pub gamma_d: f64,
    pub iz_lock: f64,
}

impl SemiclassicalParams {
    /// `A0 = A_c`, `A_ff = A_nc / 4`, no diffusion.
    pub fn from_couplings(a_c: f64, a_nc: f64, tau: f64, iz_lock: f64) -> Result<Self> {
        let p = Self { a0: a_c, a_ff: a_nc / 4.0, tau, gamma_d: 0.0, iz_lock };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.a_ff > 0.0) {
            return Err(domain("A0 and A_ff must be positive"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(domain("sensing time must be positive"));
        }
        if !(self.gamma_d >= 0.0) || !self.iz_lock.is_finite() {
            return Err(domain("diffusion rate must be non-negative and the lockpoint finite"));
        }
        Ok(())
    }

    fn tau_us(&self) -> f64 {
        self.tau * NS_TO_US
    }

    /// Duration of one sense + actuate cycle, `tau + 1/(2 A_ff)` (us).
    pub fn cycle_time(&self) -> f64 {
        self.tau_us() + 0.5 / self.a_ff
    }

    /// Cycle time at the optimal sensing time, `1/(4 A0) + 1/(2 A_ff)` (us).
    pub fn t0(&self) -> f64 {
        0.25 / self.a0 + 0.5 / self.a_ff
    }

    /// Spacing of neighbouring stable points, `1/(A0 tau)` (spins).
    pub fn capture_range(&self) -> f64 {
        1.0 / (self.a0 * self.tau_us())
    }

    fn phase(&self, iz: f64) -> f64 {
        2.0 * PI * self.a0 * (iz - self.iz_lock) * self.tau_us()
    }
}

/// `W_pm = (1 -+ sin(2 pi A0 dIz tau)) / (2 tau + 1/A_ff)` (per us).
pub fn directional_rates(delta_iz: f64, p: &SemiclassicalParams) -> (f64, f64) {
    let s = p.phase(p.iz_lock + delta_iz).sin();
    let den = 2.0 * p.tau_us() + 1.0 / p.a_ff;
    ((1.0 - s) / den, (1.0 + s) / den)
}

/// `d<I_z>/dt = -sin(2 pi A0 dIz tau) / (tau + 1/(2 A_ff)) - Gamma_d I_z` (spins per us).
pub fn rate(iz: f64, p: &SemiclassicalParams) -> f64 {
    -p.phase(iz).sin() / p.cycle_time() - p.gamma_d * 1e-6 * iz
}

/// Derivative of [`rate`] with respect to `I_z`.
pub fn rate_slope(iz: f64, p: &SemiclassicalParams) -> f64 {
    -p.phase(iz).cos() * 2.0 * PI * p.a0 * p.tau_us() / p.cycle_time() - p.gamma_d * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub iz: f64,
    pub stable: bool,
}

/// All zero crossings of the rate in `[lo, hi]`, located on a grid no coarser
/// than `1/(20 A0 tau)` and refined by bisection.
pub fn find_stable_points(p: &SemiclassicalParams, lo: f64, hi: f64) -> Result<Vec<FixedPoint>> {
    p.validate()?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(domain(format!("invalid I_z range [{lo}, {hi}]")));
    }
    let max_step = p.capture_range() / 20.0;
    let n = ((hi - lo) / max_step).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    let mut out = Vec::new();
    let mut x0 = lo;
    let mut r0 = rate(x0, p);
    if r0 == 0.0 {
        out.push(x0);
    }
    for k in 1..=n {
        let x1 = if k == n { hi } else { lo + k as f64 * h };
        let r1 = rate(x1, p);
        if r1 == 0.0 {
            out.push(x1);
        } else if r0 != 0.0 && r0.signum() != r1.signum() {
            out.push(bisect(p, x0, x1, r0));
        }
        x0 = x1;
        r0 = r1;
    }
    Ok(out.into_iter().map(|iz| FixedPoint { iz, stable: rate_slope(iz, p) < 0.0 }).collect())
}

fn bisect(p: &SemiclassicalParams, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = rate(m, p);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// us
    pub times: Vec<f64>,
    pub iz: Vec<f64>,
}

/// Fixed-step classical Runge-Kutta integration of the rate equation.
/// Requires `dt <= 0.01 * cycle_time()`; times in us. The step is shortened
/// as needed so the last sample lands exactly on `t_end`.
pub fn integrate_trajectory(iz0: f64, p: &SemiclassicalParams, t_end: f64, dt: f64) -> Result<Trajectory> {
    p.validate()?;
    if !(dt > 0.0) || dt > 0.01 * p.cycle_time() * (1.0 + 1e-12) {
        return Err(domain(format!("dt = {dt} us must lie in (0, {}]", 0.01 * p.cycle_time())));
    }
    if !(t_end >= 0.0) || !iz0.is_finite() {
        return Err(domain("t_end must be non-negative and I_z(0) finite"));
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut iz = Vec::with_capacity(steps + 1);
    let mut x = iz0;
    times.push(0.0);
    iz.push(x);
    for k in 1..=steps {
        let k1 = rate(x, p);
        let k2 = rate(x + 0.5 * dt * k1, p);
        let k3 = rate(x + 0.5 * dt * k2, p);
        let k4 = rate(x + dt * k3, p);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        times.push(k as f64 * dt);
        iz.push(x);
    }
    Ok(Trajectory { times, iz })
}
