//! Unitary primitives of one feedback cycle.
//!
//! Frequencies are ordinary frequencies in MHz, times are in ns, and every
//! propagator is `exp(-i 2 pi H t)` with `t` converted to microseconds.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dicke::{ManifoldSpec, ManifoldState, DOWN, UP};

/// Phase added to the programmed sense-pulse phase so that the Ramsey error
/// signal reads `<S_x> = -sin(2 pi A_c dI_z tau) / 2` and one cycle corrects
/// toward the lockpoint.
pub const SENSE_PHASE_OFFSET: f64 = PI;

/// Axis phase of the `R_{-y}(pi/2)` basis change preceding actuation.
pub const MINUS_Y_PHASE: f64 = -FRAC_PI_2;

pub const NS_TO_US: f64 = 1e-3;

/// Parameters of the sense and actuate gates for one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// ESR detuning (MHz); the lockpoint is `-delta / a_c`.
    pub delta: f64,
    /// Sensing time (ns).
    pub tau: f64,
    /// Sense-pulse phase (rad).
    pub phi: f64,
    /// Actuation time (ns).
    pub t_act: f64,
    pub omega_n: f64,
    pub a_c: f64,
    pub a_nc: f64,
    pub xi: f64,
}

impl GateParams {
    pub fn lockpoint(&self) -> f64 {
        -self.delta / self.a_c
    }
}

/// `exp(-i (angle/2) (cos(phase) sigma_x + sin(phase) sigma_y))`.
pub fn rotation_matrix(angle: f64, axis_phase: f64) -> [[Complex64; 2]; 2] {
    let c = Complex64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    let minus_i = Complex64::new(0.0, -1.0);
    [
        [c, minus_i * s * Complex64::from_polar(1.0, -axis_phase)],
        [minus_i * s * Complex64::from_polar(1.0, axis_phase), c],
    ]
}

/// Conjugates the electron factor by a 2x2 unitary `u`.
pub fn apply_electron_unitary(state: &mut ManifoldState, u: &[[Complex64; 2]; 2]) {
    let w = state.width();
    let ud = [[u[0][0].conj(), u[1][0].conj()], [u[0][1].conj(), u[1][1].conj()]];
    for a in 0..w {
        for b in 0..w {
            let r = [
                [state.rho[(a, b)], state.rho[(a, w + b)]],
                [state.rho[(w + a, b)], state.rho[(w + a, w + b)]],
            ];
            let mut ur = [[Complex64::new(0.0, 0.0); 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    ur[i][j] = u[i][0] * r[0][j] + u[i][1] * r[1][j];
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    let v = ur[i][0] * ud[0][j] + ur[i][1] * ud[1][j];
                    state.rho[(i * w + a, j * w + b)] = v;
                }
            }
        }
    }
}

/// Electron rotation by `angle` about the equatorial axis at `axis_phase`.
pub fn apply_rotation(state: &mut ManifoldState, angle: f64, axis_phase: f64) {
    if angle == 0.0 {
        return;
    }
    apply_electron_unitary(state, &rotation_matrix(angle, axis_phase));
}

/// Free evolution under `(delta + A_c I_z) S_z + omega_n I_z` for `tau` ns.
pub fn apply_sense(state: &mut ManifoldState, tau: f64, delta: f64, a_c: f64, omega_n: f64) {
    let w = state.width();
    let t = tau * NS_TO_US;
    let phases: Vec<Complex64> = (0..2 * w)
        .map(|k| {
            let (e, m) = (k / w, k % w);
            let iz = f64::from(state.spec.iz_lo + m as i32);
            let sz = if e == UP { 0.5 } else { -0.5 };
            let energy = (delta + a_c * iz) * sz + omega_n * iz;
            Complex64::from_polar(1.0, -2.0 * PI * energy * t)
        })
        .collect();
    let d = 2 * w;
    for a in 0..d {
        for b in 0..d {
            state.rho[(a, b)] *= phases[a] * phases[b].conj();
        }
    }
}

/// Eigen-decomposition of one flip-flop block over `{|up, m>, |down, m+1>}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipFlopBlock {
    pub iz: i32,
    /// Collective enhancement `f(I_eff, I_z)` after clamping.
    pub enhancement: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Eigenvectors are `(cos t, sin t)` and `(-sin t, cos t)` for `lambda_plus`, `lambda_minus`.
    pub mixing_angle: f64,
}

impl FlipFlopBlock {
    /// `exp(-i 2 pi H t)` for `t` in microseconds.
    pub fn propagator(&self, t: f64) -> [[Complex64; 2]; 2] {
        let (c, s) = (self.mixing_angle.cos(), self.mixing_angle.sin());
        let ep = Complex64::from_polar(1.0, -2.0 * PI * self.lambda_plus * t);
        let em = Complex64::from_polar(1.0, -2.0 * PI * self.lambda_minus * t);
        [
            [ep * c * c + em * s * s, (ep - em) * c * s],
            [(ep - em) * c * s, ep * s * s + em * c * c],
        ]
    }

    /// Reassembles the 2x2 block Hamiltonian from its eigen-decomposition.
    pub fn hamiltonian(&self) -> [[f64; 2]; 2] {
        let (c, s) = (self.mixing_angle.cos(), self.mixing_angle.sin());
        let (lp, lm) = (self.lambda_plus, self.lambda_minus);
        [
            [lp * c * c + lm * s * s, (lp - lm) * c * s],
            [(lp - lm) * c * s, lp * s * s + lm * c * c],
        ]
    }
}

/// Cached flip-flop blocks of one manifold, plus the diagonal energies of the
/// two boundary states that have no partner inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEigen {
    pub spec: ManifoldSpec,
    pub blocks: Vec<FlipFlopBlock>,
    /// Energy of `|down, iz_lo>`.
    pub lower_edge: f64,
    /// Energy of `|up, iz_hi>`.
    pub upper_edge: f64,
    /// Number of blocks whose enhancement factor had to be clamped to zero.
    pub clamped: usize,
}

/// `f(I, I_z) = sqrt(I(I+1) - I_z(I_z+1))`, the `I_+` matrix element.
pub fn enhancement_factor(i_eff: f64, iz: f64) -> Option<f64> {
    let arg = i_eff * (i_eff + 1.0) - iz * (iz + 1.0);
    (arg >= 0.0).then(|| arg.sqrt())
}

/// Flip-flop coupling between `|up, m>` and `|down, m+1>`.
///
/// The coupling `A_ff f / 2` with `A_ff = A_nc / 4` makes a resonant block
/// complete its swap at `T = 1 / (2 f A_ff) = 2 / (A_nc f)`.
pub fn flip_flop_coupling(a_nc: f64, f: f64) -> f64 {
    a_nc * f / 8.0
}

/// Swap time `2 / (A_nc f)` in ns.
pub fn swap_time_ns(a_nc: f64, f: f64) -> f64 {
    2.0 / (a_nc * f) / NS_TO_US
}

/// Builds the block decomposition of
/// `H' = Omega S_z + omega_n I_z - A_ff (S_+ I_- + S_- I_+)` at Hartmann-Hahn
/// resonance `Omega = omega_n`, with `I -> sqrt(xi) I`.
pub fn build_actuation_blocks(spec: &ManifoldSpec, params: &GateParams) -> BlockEigen {
    let omega = params.omega_n;
    let i_eff = params.xi.sqrt() * f64::from(spec.i);
    let mut clamped = 0;
    let blocks = (spec.iz_lo..spec.iz_hi)
        .map(|m| {
            let mf = f64::from(m);
            let f = match enhancement_factor(i_eff, mf) {
                Some(f) => f,
                None => {
                    clamped += 1;
                    0.0
                }
            };
            let a = 0.5 * omega + params.omega_n * mf;
            let b = -0.5 * omega + params.omega_n * (mf + 1.0);
            let g = -flip_flop_coupling(params.a_nc, f);
            let mean = 0.5 * (a + b);
            let r = (0.25 * (a - b).powi(2) + g * g).sqrt();
            FlipFlopBlock {
                iz: m,
                enhancement: f,
                lambda_plus: mean + r,
                lambda_minus: mean - r,
                mixing_angle: 0.5 * (2.0 * g).atan2(a - b),
            }
        })
        .collect();
    BlockEigen {
        spec: *spec,
        blocks,
        lower_edge: -0.5 * omega + params.omega_n * f64::from(spec.iz_lo),
        upper_edge: 0.5 * omega + params.omega_n * f64::from(spec.iz_hi),
        clamped,
    }
}

/// Sparse representation of a block-diagonal unitary: each basis index couples
/// to itself and at most one partner.
struct PairedUnitary {
    diag: Vec<Complex64>,
    partner: Vec<Option<(usize, Complex64)>>,
}

impl PairedUnitary {
    fn from_blocks(blocks: &BlockEigen, t: f64) -> Self {
        let w = blocks.spec.width();
        let d = 2 * w;
        let mut diag = vec![Complex64::new(1.0, 0.0); d];
        let mut partner = vec![None; d];
        for (m, block) in blocks.blocks.iter().enumerate() {
            let up = UP * w + m;
            let down = DOWN * w + m + 1;
            let u = block.propagator(t);
            diag[up] = u[0][0];
            diag[down] = u[1][1];
            partner[up] = Some((down, u[0][1]));
            partner[down] = Some((up, u[1][0]));
        }
        diag[DOWN * w] = Complex64::from_polar(1.0, -2.0 * PI * blocks.lower_edge * t);
        diag[UP * w + w - 1] = Complex64::from_polar(1.0, -2.0 * PI * blocks.upper_edge * t);
        Self { diag, partner }
    }

    fn conjugate(&self, state: &mut ManifoldState) {
        let d = state.dim();
        let rho = &state.rho;
        // rows: (U rho)
        let mut tmp = rho.clone();
        for k in 0..d {
            for c in 0..d {
                let mut v = self.diag[k] * rho[(k, c)];
                if let Some((p, u)) = self.partner[k] {
                    v += u * rho[(p, c)];
                }
                tmp[(k, c)] = v;
            }
        }
        // columns: (U rho) U^dagger
        for r in 0..d {
            for l in 0..d {
                let mut v = tmp[(r, l)] * self.diag[l].conj();
                if let Some((p, u)) = self.partner[l] {
                    v += tmp[(r, p)] * u.conj();
                }
                state.rho[(r, l)] = v;
            }
        }
    }
}

/// Block-diagonal flip-flop propagator `exp(-i 2 pi T H')` for `t_act` ns.
pub fn apply_flip_flop(state: &mut ManifoldState, blocks: &BlockEigen, t_act: f64) {
    debug_assert_eq!(blocks.spec.width(), state.width());
    PairedUnitary::from_blocks(blocks, t_act * NS_TO_US).conjugate(state);
}

/// Full actuation gate: `R_{-y}(pi/2)` followed by the flip-flop propagator.
pub fn apply_actuate(state: &mut ManifoldState, blocks: &BlockEigen, t_act: f64) {
    apply_rotation(state, FRAC_PI_2, MINUS_Y_PHASE);
    apply_flip_flop(state, blocks, t_act);
}
