//! Fast invariant checks runnable from a release binary. Deterministic: no
//! random inputs.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::channels::{
    nuclear_dephasing_channel, optical_relaxation_channel, reset_channel, transverse_noise_channel,
    transverse_noise_factor, NoiseParams, RateConvention,
};
use crate::dicke::{degeneracy, sample_manifolds, EnsembleModel, ManifoldSpec, ManifoldState, Species, UP};
use crate::engine::{run_cycle, Ablation, FeedbackConfig, TauSchedule};
use crate::gates::{apply_rotation, apply_sense, enhancement_factor, swap_time_ns, NS_TO_US};
use crate::probe::{lddp_entropy, synthesize_fid, FrequencyGrid, LddpParams, SpectralDistribution};
use crate::semiclassical::{find_stable_points, rate, SemiclassicalParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 0 { 1.0 } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `integral_0^t integral_0^t exp(-g|s1-s2|) cos(w(s1-s2))`, as twice the
/// integral over the triangle `s2 < s1` (where the integrand is smooth) with
/// composite Gauss-Legendre rules of `panels` panels per axis.
pub fn correlator_double_integral_quadrature(t: f64, g: f64, w: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(12);
    let integrate = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
                rule.iter().map(|(x, wt)| wt * f(0.5 * (lo + hi) + 0.5 * (hi - lo) * x)).sum::<f64>() * 0.5 * (hi - lo)
            })
            .sum()
    };
    2.0 * integrate(0.0, t, &|s1| integrate(0.0, s1, &|s2| (-g * (s1 - s2)).exp() * (w * (s1 - s2)).cos()))
}

/// Deterministic non-diagonal test states on a small manifold.
fn probe_states() -> Vec<ManifoldState> {
    let spec = ManifoldSpec::new(6, -3, 3, 1.0).expect("valid spec");
    let d = 2 * spec.width();
    let mut out = Vec::new();
    for k in 0..4 {
        let psi = DVector::from_fn(d, |j, _| Complex64::from_polar(1.0 + ((j * (k + 2)) % 5) as f64, 0.7 * (j * k) as f64));
        let psi = psi.unscale(psi.norm());
        let mut st = ManifoldState::from_matrix(spec, &psi * psi.adjoint()).expect("valid state");
        apply_rotation(&mut st, 0.4 + k as f64, 0.3 * k as f64);
        out.push(st);
    }
    // A mixture of the pure states above.
    let mix = out.iter().fold(out[0].rho.scale(0.0), |acc, s| acc + s.rho.scale(0.25));
    out.push(ManifoldState::from_matrix(spec, mix).expect("valid mixture"));
    out
}

fn cptp_error(f: impl Fn(&mut ManifoldState)) -> (f64, f64, f64) {
    let (mut tr, mut herm, mut neg) = (0.0f64, 0.0f64, 0.0f64);
    for st in probe_states() {
        let mut s = st.clone();
        f(&mut s);
        tr = tr.max((s.trace() - st.trace()).abs());
        herm = herm.max(s.hermiticity_error());
        neg = neg.max(-s.min_eigenvalue());
    }
    (tr, herm, neg)
}

/// Runs every check; the suite passes when all entries pass.
pub fn run_selftest() -> Vec<Check> {
    let mut out = Vec::new();

    let mut complete = true;
    for n in (2..=24).step_by(2) {
        let total: u64 = (0..=n / 2).map(|i| (2 * u64::from(i) + 1) * degeneracy(i, n).map(|d| d.value() as u64).unwrap_or(0)).sum();
        complete &= total == 1u64 << n;
    }
    out.push(check("dicke_completeness", complete, "sum (2I+1) D = 2^N for even N <= 24".into()));

    let sampled = sample_manifolds(49_000, 46, 14, 1.0 / 14.0).map(|m| m.iter().map(|s| s.weight).sum::<f64>());
    out.push(match sampled {
        Ok(s) => check("weights_normalized", (s - 1.0).abs() < 1e-12, format!("sum = {s:.15}")),
        Err(e) => check("weights_normalized", false, e.to_string()),
    });

    let np = NoiseParams { gamma: 6.0, gamma_opt: 1.7, omega_n: 25.3, a_nc: 0.156, convention: RateConvention::Angular };
    let channels: [(&'static str, Box<dyn Fn(&mut ManifoldState)>); 4] = [
        ("cptp_reset", Box::new(reset_channel)),
        ("cptp_transverse", Box::new(move |s: &mut ManifoldState| {
            transverse_noise_channel(s, 98.0, &np);
        })),
        ("cptp_optical", Box::new(|s: &mut ManifoldState| optical_relaxation_channel(s, 86.0, 1.7))),
        ("cptp_dephasing", Box::new(|s: &mut ManifoldState| nuclear_dephasing_channel(s, 86.0, 6.0))),
    ];
    for (name, f) in channels {
        let (tr, herm, neg) = cptp_error(f);
        out.push(check(name, tr < 1e-12 && herm < 1e-12 && neg < 1e-10, format!("trace {tr:.1e}, herm {herm:.1e}, neg {neg:.1e}")));
    }

    let mut worst = 0.0f64;
    for &(tau, gamma, omega) in &[(30.0, 6.0, 25.3), (98.0, 6.0, 32.7), (60.0, 0.0, 0.0), (200.0, 20.0, 29.0)] {
        let p = NoiseParams { gamma, omega_n: omega, ..np };
        let (i, iz2) = (156.0, 100.0);
        let g = PI * gamma;
        let quad = correlator_double_integral_quadrature(tau * NS_TO_US, g, 2.0 * PI * omega, 8);
        let amp = 2.0 * PI * p.a_nc;
        let w_quad = (-0.25 * (i * i - iz2) * amp * amp * quad).exp();
        worst = worst.max((transverse_noise_factor(tau, i, iz2, &p) - w_quad).abs());
    }
    out.push(check("transverse_noise_closed_form", worst < 1e-6, format!("max |dW| = {worst:.2e}")));

    let model = EnsembleModel {
        n: 320,
        a_c: 0.63,
        a_nc: 0.156,
        xi: 1.0,
        species: vec![Species::new("X", 29.0)],
        manifolds: vec![ManifoldSpec::new(160, -6, 6, 1.0).expect("valid spec")],
    };
    let f = enhancement_factor(160.0, 0.0).unwrap_or(0.0);
    let cfg = FeedbackConfig {
        n_cycles: 1,
        tau_schedule: TauSchedule::Fixed(250.0 / model.a_c),
        t_act: swap_time_ns(model.a_nc, f),
        gamma: 0.0,
        gamma_opt: 0.0,
        ablation: Ablation::unitary(),
        ..FeedbackConfig::default()
    };
    let mut min_lock = 1.0f64;
    for start in [-1, 1] {
        if let Ok(mut st) = ManifoldState::pure(model.manifolds[0], UP, start) {
            run_cycle(&mut st, 0, &cfg, &model, &model.species[0]);
            min_lock = min_lock.min(st.nuclear_populations()[6]);
        }
    }
    out.push(check("single_spin_limit_cycle", min_lock >= 0.99, format!("P(lock) = {min_lock:.6}")));

    let mut sense = probe_states().remove(4);
    let before = sense.nuclear_populations();
    apply_sense(&mut sense, 70.0, 1.0, 0.63, 25.3);
    let drift = before.iter().zip(sense.nuclear_populations()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(check("sense_preserves_populations", drift < 1e-14, format!("max drift {drift:.1e}")));

    let mut sp = SemiclassicalParams::from_couplings(0.63, 0.156, 1.0, 0.0).expect("valid params");
    sp.tau = 0.25 / sp.a0 / NS_TO_US;
    let gain = sp.t0() * rate(1.0, &sp);
    out.push(check("semiclassical_optimal_gain", (gain + 1.0).abs() < 1e-14, format!("T0 rate = {gain:.17}")));
    sp.tau = 150.0;
    let stable: Vec<f64> = find_stable_points(&sp, -40.0, 40.0)
        .unwrap_or_default()
        .into_iter()
        .filter(|p| p.stable)
        .map(|p| p.iz)
        .collect();
    let spacing_ok = stable.len() > 2 && stable.windows(2).all(|w| (w[1] - w[0] - sp.capture_range()).abs() < 1e-9);
    out.push(check("semiclassical_lattice", spacing_ok, format!("{} stable points", stable.len())));

    let grid = FrequencyGrid::default();
    let uniform = SpectralDistribution::from_fn(&grid, |_| 1.0);
    out.push(match uniform {
        Ok(u) => {
            let s = lddp_entropy(&u, LddpParams::default());
            let fid0 = synthesize_fid(&u, &[0.0], 60.0).values[0];
            check(
                "probe_normalizations",
                (s - 400f64.ln()).abs() < 1e-9 && fid0 == 0.5,
                format!("S_uniform = {s:.12}, FID(0) = {fid0}"),
            )
        }
        Err(e) => check("probe_normalizations", false, e.to_string()),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn quadrature_matches_trivial_limits() {
        let rule = gauss_legendre(12);
        assert!((rule.iter().map(|(_, w)| w).sum::<f64>() - 2.0).abs() < 1e-14);
        assert!((rule.iter().map(|(x, w)| w * x.powi(22)).sum::<f64>() - 2.0 / 23.0).abs() < 1e-14);
        assert!((correlator_double_integral_quadrature(0.3, 0.0, 0.0, 2) - 0.09).abs() < 1e-15);
        // exp(-g|s|): 2 (g t - 1 + e^{-g t}) / g^2
        let (t, g) = (0.5f64, 3.0f64);
        let exact = 2.0 * (g * t - 1.0 + (-g * t).exp()) / (g * g);
        assert!((correlator_double_integral_quadrature(t, g, 0.0, 4) - exact).abs() < 1e-14);
    }
}
