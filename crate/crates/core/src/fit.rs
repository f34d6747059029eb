//! Stretched-exponential Ramsey fit `A cos(2 pi w_s tau) exp(-(tau/T2*)^alpha)`
//! by bounded Levenberg-Marquardt with an analytic Jacobian.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gates::NS_TO_US;
use crate::probe::FidTrace;

pub const ALPHA_BOUNDS: (f64, f64) = (0.3, 4.0);
const MAX_ITERATIONS: usize = 400;
const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    /// ns
    pub t2_star: f64,
    pub alpha: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    t: &'a [f64],
    carrier: Vec<f64>,
    y: &'a [f64],
}

impl Problem<'_> {
    /// Parameters are `(A, ln T2*, alpha)`.
    fn residuals(&self, p: &Vector3<f64>) -> Vec<f64> {
        let t2 = p[1].exp();
        self.t
            .iter()
            .zip(&self.carrier)
            .zip(self.y)
            .map(|((&t, &c), &y)| y - p[0] * c * (-(t / t2).powf(p[2])).exp())
            .collect()
    }

    fn cost(&self, p: &Vector3<f64>) -> f64 {
        self.residuals(p).iter().map(|r| r * r).sum()
    }

    /// Normal equations `J^T J` and `J^T r` of the model.
    fn normal(&self, p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let t2 = p[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for ((&t, &c), &y) in self.t.iter().zip(&self.carrier).zip(self.y) {
            let x = t / t2;
            let (u, lnx) = if x > 0.0 { (x.powf(p[2]), x.ln()) } else { (0.0, 0.0) };
            let e = (-u).exp();
            let f = p[0] * c * e;
            let g = Vector3::new(c * e, f * u * p[2], -f * u * lnx);
            jtj += g * g.transpose();
            jtr += g * (y - f);
        }
        (jtj, jtr)
    }
}

/// First delay where the carrier-divided signal drops below `A/e`, using
/// only samples where the carrier is at least half its amplitude.
fn initial_t2(fid: &FidTrace, carrier: &[f64], amplitude: f64) -> f64 {
    let target = amplitude / std::f64::consts::E;
    let mut prev: Option<(f64, f64)> = None;
    for ((&t, &c), &v) in fid.times.iter().zip(carrier).zip(&fid.values) {
        if c.abs() < 0.5 || t <= 0.0 {
            continue;
        }
        let env = v / c;
        if env < target {
            return match prev {
                Some((t0, e0)) if e0 > env => t0 + (e0 - target) / (e0 - env) * (t - t0),
                _ => t,
            };
        }
        prev = Some((t, env));
    }
    let span = fid.times.last().copied().unwrap_or(1.0) - fid.times[0];
    span.max(f64::MIN_POSITIVE)
}

/// Fits the carrier and envelope jointly with the carrier frequency fixed.
/// Starts from `A = 1/2`, `alpha = 1.5` and the first `1/e` crossing of the
/// demodulated envelope. A budget overrun returns `converged = false` with
/// the best parameters found.
pub fn fit_stretched_exponential(fid: &FidTrace) -> Result<FitResult> {
    if fid.times.len() < MIN_SAMPLES || fid.times.len() != fid.values.len() {
        return Err(domain(format!("FID fit needs at least {MIN_SAMPLES} samples")));
    }
    if fid.times.iter().chain(&fid.values).any(|v| !v.is_finite()) || fid.times.iter().any(|t| *t < 0.0) {
        return Err(domain("FID samples must be finite with non-negative delays"));
    }
    let carrier: Vec<f64> = fid.times.iter().map(|t| (2.0 * PI * fid.omega_serr * t * NS_TO_US).cos()).collect();
    let prob = Problem { t: &fid.times, carrier, y: &fid.values };

    let a0 = 0.5;
    let mut p = Vector3::new(a0, initial_t2(fid, &prob.carrier, a0).ln(), 1.5);
    let mut cost = prob.cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = prob.normal(&p);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p + step;
            trial[2] = trial[2].clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1);
            let c = prob.cost(&trial);
            if c.is_finite() && c <= cost {
                let rel_step = (trial - p).abs().max();
                let rel_cost = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel_step < 1e-12 || rel_cost < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left: at a (possibly bounded) minimum.
            converged = lambda > 1e10;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(FitResult {
        amplitude: p[0],
        t2_star: p[1].exp(),
        alpha: p[2],
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    })
}
