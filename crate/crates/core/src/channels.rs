//! Non-unitary Kraus maps applied to a [`ManifoldState`].
//!
//! Every channel here acts either on the electron factor alone or on the
//! nuclear coherences alone, so each is applied element-wise on the 2x2
//! electron blocks instead of through dense Kraus products.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dicke::ManifoldState;
use crate::gates::NS_TO_US;

/// How the nuclear dephasing rate enters the transverse-noise transfer function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateConvention {
    /// `Gamma -> 2 pi Gamma` inside `W(tau)`, matching the angular `omega_n`.
    #[default]
    Angular,
    /// `Gamma` used as an ordinary rate inside `W(tau)`.
    Ordinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Pure nuclear dephasing rate (MHz).
    pub gamma: f64,
    /// Optically induced electron relaxation rate (MHz).
    pub gamma_opt: f64,
    pub omega_n: f64,
    pub a_nc: f64,
    pub convention: RateConvention,
}

/// Electron reset: `K0 = |up><up| (x) 1`, `K1 = |up><down| (x) 1`.
pub fn reset_channel(state: &mut ManifoldState) {
    let w = state.width();
    let zero = Complex64::new(0.0, 0.0);
    for a in 0..w {
        for b in 0..w {
            let dd = state.rho[(w + a, w + b)];
            state.rho[(a, b)] += dd;
            state.rho[(w + a, w + b)] = zero;
            state.rho[(a, w + b)] = zero;
            state.rho[(w + a, b)] = zero;
        }
    }
}

/// Phase variance `sigma_tau^2` accumulated by the electron over `tau` ns from a
/// Gaussian transverse field with correlator
/// `(I^2 - <I_z^2>)/2 * exp(-Gamma |t|/2) cos(omega_n t)`.
pub fn transverse_noise_variance(tau: f64, i: f64, iz_second_moment: f64, params: &NoiseParams) -> f64 {
    let t = tau * NS_TO_US;
    let amp = 2.0 * PI * params.a_nc;
    let transverse = (i * i - iz_second_moment).max(0.0);
    let gamma = match params.convention {
        RateConvention::Angular => 2.0 * PI * params.gamma,
        RateConvention::Ordinary => params.gamma,
    };
    let g = gamma / 2.0;
    let w = 2.0 * PI * params.omega_n;
    let den = g * g + w * w;

    // Double integral of exp(-g|t1-t2|) cos(w(t1-t2)) over [0, t]^2.
    let double = if den * t * t < 1e-6 {
        // Series about g = w = 0 avoids catastrophic cancellation.
        let x = -g * t;
        t * t * (1.0 + x / 3.0 + (x * x - w * w * t * t) / 12.0)
    } else {
        let decay = (-g * t).exp();
        let osc = (g * g - w * w) * (1.0 - decay * (w * t).cos()) + 2.0 * g * w * decay * (w * t).sin();
        2.0 * (g * t / den - osc / (den * den))
    };
    0.5 * transverse * amp * amp * double
}

/// Coherence transfer function `W(tau) = exp(-sigma_tau^2 / 2)`.
pub fn transverse_noise_factor(tau: f64, i: f64, iz_second_moment: f64, params: &NoiseParams) -> f64 {
    if tau <= 0.0 || params.a_nc == 0.0 {
        return 1.0;
    }
    (-0.5 * transverse_noise_variance(tau, i, iz_second_moment, params)).exp()
}

/// Applies the electronic map with `K0 = sqrt(W) 1`,
/// `K1 = sqrt(1-W) |down><up|`, `K2 = sqrt(1-W) |up><down|`.
pub fn apply_transverse_kraus(state: &mut ManifoldState, w_factor: f64) {
    if w_factor == 1.0 {
        return;
    }
    let w = state.width();
    let keep = w_factor;
    let swap = 1.0 - w_factor;
    for a in 0..w {
        for b in 0..w {
            let uu = state.rho[(a, b)];
            let dd = state.rho[(w + a, w + b)];
            state.rho[(a, b)] = uu * keep + dd * swap;
            state.rho[(w + a, w + b)] = dd * keep + uu * swap;
            state.rho[(a, w + b)] *= keep;
            state.rho[(w + a, b)] *= keep;
        }
    }
}

/// Transverse-noise dephasing during a `tau` ns sensing window; `W` is
/// evaluated from the state's own `<I_z^2>`. Returns the factor used.
pub fn transverse_noise_channel(state: &mut ManifoldState, tau: f64, params: &NoiseParams) -> f64 {
    let i = f64::from(state.spec.i);
    let w = transverse_noise_factor(tau, i, state.iz_second_moment(), params);
    apply_transverse_kraus(state, w);
    w
}

/// Generalized amplitude damping of the electron toward the maximally mixed
/// state with `gamma = 1 - exp(-Gamma_opt T)`.
pub fn optical_relaxation_channel(state: &mut ManifoldState, t_act: f64, gamma_opt: f64) {
    if gamma_opt == 0.0 || t_act == 0.0 {
        return;
    }
    let e = (-gamma_opt * t_act * NS_TO_US).exp();
    let stay = 0.5 * (1.0 + e);
    let flip = 0.5 * (1.0 - e);
    let coh = e.sqrt();
    let w = state.width();
    for a in 0..w {
        for b in 0..w {
            let uu = state.rho[(a, b)];
            let dd = state.rho[(w + a, w + b)];
            state.rho[(a, b)] = uu * stay + dd * flip;
            state.rho[(w + a, w + b)] = dd * stay + uu * flip;
            state.rho[(a, w + b)] *= coh;
            state.rho[(w + a, b)] *= coh;
        }
    }
}

/// Kraus operators of the generalized amplitude-damping channel (electron factor only).
pub fn optical_relaxation_kraus(t_act: f64, gamma_opt: f64) -> [[[f64; 2]; 2]; 4] {
    let gamma = 1.0 - (-gamma_opt * t_act * NS_TO_US).exp();
    let h = 0.5f64.sqrt();
    let s = (1.0 - gamma).sqrt();
    let g = gamma.sqrt();
    [
        [[h, 0.0], [0.0, h * s]],
        [[0.0, h * g], [0.0, 0.0]],
        [[h * s, 0.0], [0.0, h]],
        [[0.0, 0.0], [h * g, 0.0]],
    ]
}

/// Nuclear phase damping: every element with `I_z != I_z'` is scaled by
/// `exp(-Gamma T / 2)`.
pub fn nuclear_dephasing_channel(state: &mut ManifoldState, t_act: f64, gamma: f64) {
    if gamma == 0.0 || t_act == 0.0 {
        return;
    }
    let damp = (-gamma * t_act * NS_TO_US / 2.0).exp();
    let w = state.width();
    let d = 2 * w;
    for a in 0..d {
        for b in 0..d {
            if a % w != b % w {
                state.rho[(a, b)] *= damp;
            }
        }
    }
}
