//! Dicke-manifold bookkeeping for an ensemble of `N` spin-1/2 nuclei.
//!
//! The collective nuclear state is split into independent total-angular-momentum
//! manifolds `I = 0..N/2`. Each manifold appears `D(I, N)` times in the full
//! Hilbert space; at infinite temperature manifold `I` carries the combined
//! statistical weight `w'(I, N) = (2I + 1) D(I, N) / 2^N`. Only a handful of
//! manifolds are simulated, each on a truncated window of `I_z` values around
//! zero polarization.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{config, domain, Result};

/// Largest ensemble for which degeneracies are computed in integer arithmetic.
pub const EXACT_DEGENERACY_MAX_N: u32 = 24;

/// Above this size `sample_manifolds` switches from exact to approximate weights.
pub const EXACT_WEIGHT_MAX_N: u32 = 30_000;

/// Multiplicity of manifold `I`, either exact or as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degeneracy {
    Exact(u64),
    Log(f64),
}

impl Degeneracy {
    pub fn ln(&self) -> f64 {
        match *self {
            Degeneracy::Exact(d) => (d as f64).ln(),
            Degeneracy::Log(l) => l,
        }
    }

    /// Floating-point value; overflows to infinity for very large ensembles.
    pub fn value(&self) -> f64 {
        match *self {
            Degeneracy::Exact(d) => d as f64,
            Degeneracy::Log(l) => l.exp(),
        }
    }
}

fn check_domain(i: u32, n: u32) -> Result<()> {
    if n % 2 != 0 {
        return Err(domain(format!("ensemble size N = {n} must be even")));
    }
    if i > n / 2 {
        return Err(domain(format!("I = {i} exceeds N/2 = {}", n / 2)));
    }
    Ok(())
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, j| acc * (n - j) / (j + 1))
}

/// `D(I, N) = N! (2I+1) / ((N/2 - I)! (N/2 + I + 1)!)`.
///
/// Exact integer arithmetic up to `N = 24`, log-gamma above.
pub fn degeneracy(i: u32, n: u32) -> Result<Degeneracy> {
    check_domain(i, n)?;
    if n <= EXACT_DEGENERACY_MAX_N {
        // D = C(N, N/2 - I) - C(N, N/2 - I - 1)
        let k = u64::from(n / 2 - i);
        let n = u64::from(n);
        let lower = if k == 0 { 0 } else { binomial(n, k - 1) };
        Ok(Degeneracy::Exact(binomial(n, k) - lower))
    } else {
        Ok(Degeneracy::Log(ln_degeneracy_unchecked(i, n)))
    }
}

fn ln_degeneracy_unchecked(i: u32, n: u32) -> f64 {
    let n = f64::from(n);
    let i = f64::from(i);
    ln_gamma(n + 1.0) + (2.0 * i + 1.0).ln() - ln_gamma(n / 2.0 - i + 1.0) - ln_gamma(n / 2.0 + i + 2.0)
}

/// Natural log of `w'(I, N)`.
pub fn ln_weight_exact(i: u32, n: u32) -> Result<f64> {
    let d = degeneracy(i, n)?;
    Ok((2.0 * f64::from(i) + 1.0).ln() + d.ln() - f64::from(n) * std::f64::consts::LN_2)
}

/// Combined statistical weight `w'(I, N) = (2I+1) D(I, N) / 2^N`.
pub fn weight_exact(i: u32, n: u32) -> Result<f64> {
    if n <= EXACT_DEGENERACY_MAX_N {
        check_domain(i, n)?;
        if let Degeneracy::Exact(d) = degeneracy(i, n)? {
            return Ok((2 * u64::from(i) + 1) as f64 * d as f64 / 2f64.powi(n as i32));
        }
    }
    Ok(ln_weight_exact(i, n)?.exp())
}

/// Large-`N` form `2^{5/2} I (2I+1) / (sqrt(pi) N^{3/2}) exp(-2 I^2 / N)`.
pub fn weight_approx(i: f64, n: f64) -> f64 {
    let pref = 2f64.powf(2.5) / (std::f64::consts::PI.sqrt() * n.powf(1.5));
    pref * i * (2.0 * i + 1.0) * (-2.0 * i * i / n).exp()
}

/// One simulated manifold: its total spin, truncation window and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub i: u32,
    pub iz_lo: i32,
    pub iz_hi: i32,
    pub weight: f64,
}

impl ManifoldSpec {
    pub fn new(i: u32, iz_lo: i32, iz_hi: i32, weight: f64) -> Result<Self> {
        let spec = Self { i, iz_lo, iz_hi, weight };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let i = self.i as i32;
        if self.iz_lo > self.iz_hi || self.iz_lo < -i || self.iz_hi > i {
            return Err(config(format!(
                "window [{}, {}] invalid for I = {}",
                self.iz_lo, self.iz_hi, self.i
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(config(format!("weight {} outside [0, 1]", self.weight)));
        }
        Ok(())
    }

    /// Number of `I_z` values in the window.
    pub fn width(&self) -> usize {
        (self.iz_hi - self.iz_lo + 1) as usize
    }

    pub fn contains(&self, iz: f64) -> bool {
        iz >= f64::from(self.iz_lo) && iz <= f64::from(self.iz_hi)
    }

    /// Whether `lockpoint` sits at least `margin` sites inside the window.
    /// Windows narrower than the margin only need to contain it.
    pub fn admits_lockpoint(&self, lockpoint: f64, margin: u32) -> bool {
        let half = f64::from(self.iz_hi - self.iz_lo) / 2.0;
        let m = f64::from(margin).min(half.floor());
        lockpoint >= f64::from(self.iz_lo) + m && lockpoint <= f64::from(self.iz_hi) - m
    }
}

/// Manifolds `I = 0, spacing, 2 spacing, ...` with windows `|I_z| <= I * window_fraction`
/// and weights renormalized to unit sum (ratios preserved).
pub fn sample_manifolds(n: u32, count: u32, spacing: u32, window_fraction: f64) -> Result<Vec<ManifoldSpec>> {
    if count < 1 {
        return Err(config("manifold count must be at least 1"));
    }
    if spacing < 1 && count > 1 {
        return Err(config("manifold spacing must be positive"));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(config(format!("window fraction {window_fraction} outside (0, 1]")));
    }
    if n % 2 != 0 {
        return Err(config(format!("ensemble size N = {n} must be even")));
    }
    let i_max = u64::from(count - 1) * u64::from(spacing);
    if i_max > u64::from(n / 2) {
        return Err(config(format!(
            "{count} manifolds at spacing {spacing} exceed I_max = N/2 = {}",
            n / 2
        )));
    }

    let mut specs = Vec::with_capacity(count as usize);
    for k in 0..count {
        let i = k * spacing;
        let raw = if n <= EXACT_WEIGHT_MAX_N {
            weight_exact(i, n)?
        } else {
            weight_approx(f64::from(i), f64::from(n))
        };
        // Guard against I * (1/k) landing a hair below an integer.
        let half = ((f64::from(i) * window_fraction) + 1e-9).floor().min(f64::from(i)) as i32;
        specs.push(ManifoldSpec { i, iz_lo: -half, iz_hi: half, weight: raw });
    }
    let total: f64 = specs.iter().map(|s| s.weight).sum();
    if !(total > 0.0) {
        return Err(config("sampled manifolds carry zero total weight"));
    }
    for s in &mut specs {
        s.weight /= total;
    }
    Ok(specs)
}

/// A nuclear species driven at its own Hartmann-Hahn resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub label: String,
    /// Nuclear Zeeman frequency (MHz).
    pub omega_n: f64,
}

impl Species {
    pub fn new(label: impl Into<String>, omega_n: f64) -> Self {
        Self { label: label.into(), omega_n }
    }
}

/// Ensemble parameters shared by every manifold and species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub n: u32,
    /// Collinear hyperfine constant per nucleus (MHz).
    pub a_c: f64,
    /// Noncollinear hyperfine constant (MHz).
    pub a_nc: f64,
    /// Fraction of nuclei partaking in the flip-flop exchange.
    pub xi: f64,
    pub species: Vec<Species>,
    pub manifolds: Vec<ManifoldSpec>,
}

impl EnsembleModel {
    /// Fitted quantum-dot parameter set: 49,000 nuclei, As and In species,
    /// 46 manifolds at spacing 14 with windows `|I_z| <= I/14`.
    pub fn nominal() -> Self {
        let n = 49_000;
        Self {
            n,
            a_c: 0.63,
            a_nc: 0.156,
            xi: 0.42,
            species: vec![Species::new("As", 25.3), Species::new("In", 32.7)],
            manifolds: sample_manifolds(n, 46, 14, 1.0 / 14.0).expect("nominal sampling is valid"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n % 2 != 0 || self.n == 0 {
            return Err(config(format!("N = {} must be even and positive", self.n)));
        }
        if !(self.a_c > 0.0) {
            return Err(config(format!("A_c = {} must be positive", self.a_c)));
        }
        if !(self.a_nc >= 0.0) {
            return Err(config(format!("A_nc = {} must be non-negative", self.a_nc)));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(config(format!("xi = {} outside (0, 1]", self.xi)));
        }
        if self.species.is_empty() {
            return Err(config("at least one nuclear species is required"));
        }
        for s in &self.species {
            if !(s.omega_n > 0.0) {
                return Err(config(format!("species {}: omega_n must be positive", s.label)));
            }
        }
        if self.manifolds.is_empty() {
            return Err(config("manifold list is empty"));
        }
        for m in &self.manifolds {
            m.validate()?;
            if m.i > self.n / 2 {
                return Err(config(format!("manifold I = {} exceeds N/2", m.i)));
            }
        }
        let total: f64 = self.manifolds.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(config(format!("manifold weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Drops manifolds whose window cannot host every lockpoint in `[lo, hi]`
    /// with the given margin and renormalizes the remaining weights.
    pub fn restrict_to_lockpoints(&self, lo: f64, hi: f64, margin: u32) -> Result<Self> {
        let mut out = self.clone();
        out.manifolds
            .retain(|m| m.admits_lockpoint(lo, margin) && m.admits_lockpoint(hi, margin));
        let total: f64 = out.manifolds.iter().map(|m| m.weight).sum();
        if out.manifolds.is_empty() || !(total > 0.0) {
            return Err(config(format!("no manifold window hosts lockpoints [{lo}, {hi}]")));
        }
        for m in &mut out.manifolds {
            m.weight /= total;
        }
        Ok(out)
    }
}

/// Electron index in the product basis.
pub const UP: usize = 0;
pub const DOWN: usize = 1;

/// Electron (x) nuclear density matrix of one truncated manifold.
///
/// Basis index is `e * W + (I_z - iz_lo)` with `e = 0` for electron up.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldState {
    pub spec: ManifoldSpec,
    pub rho: DMatrix<Complex64>,
}

impl ManifoldState {
    pub fn from_matrix(spec: ManifoldSpec, rho: DMatrix<Complex64>) -> Result<Self> {
        let d = 2 * spec.width();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(domain(format!("density matrix must be {d}x{d}")));
        }
        Ok(Self { spec, rho })
    }

    /// Pure product state `|e> (x) |I, iz>`.
    pub fn pure(spec: ManifoldSpec, electron: usize, iz: i32) -> Result<Self> {
        if !spec.contains(f64::from(iz)) || electron > 1 {
            return Err(domain(format!("I_z = {iz} outside window of I = {}", spec.i)));
        }
        let d = 2 * spec.width();
        let mut rho = DMatrix::zeros(d, d);
        let k = electron * spec.width() + (iz - spec.iz_lo) as usize;
        rho[(k, k)] = Complex64::new(1.0, 0.0);
        Ok(Self { spec, rho })
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn index(&self, electron: usize, iz: i32) -> usize {
        electron * self.width() + (iz - self.spec.iz_lo) as usize
    }

    pub fn iz_values(&self) -> impl Iterator<Item = i32> {
        self.spec.iz_lo..=self.spec.iz_hi
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.rho[(k, k)].re).sum()
    }

    /// Diagonal of the nuclear marginal (not normalized by the trace).
    pub fn nuclear_populations(&self) -> Vec<f64> {
        let w = self.width();
        (0..w).map(|m| self.rho[(m, m)].re + self.rho[(w + m, w + m)].re).collect()
    }

    /// Full nuclear marginal `Tr_e rho`.
    pub fn nuclear_marginal(&self) -> DMatrix<Complex64> {
        let w = self.width();
        DMatrix::from_fn(w, w, |a, b| self.rho[(a, b)] + self.rho[(w + a, w + b)])
    }

    /// Electron reduced density matrix `Tr_n rho`.
    pub fn electron_marginal(&self) -> [[Complex64; 2]; 2] {
        let w = self.width();
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (e, row) in out.iter_mut().enumerate() {
            for (f, cell) in row.iter_mut().enumerate() {
                *cell = (0..w).map(|m| self.rho[(e * w + m, f * w + m)]).sum();
            }
        }
        out
    }

    /// `(<S_x>, <S_y>, <S_z>)` normalized by the trace.
    pub fn electron_spin(&self) -> [f64; 3] {
        let e = self.electron_marginal();
        let tr = e[0][0].re + e[1][1].re;
        [e[0][1].re / tr, -e[0][1].im / tr, 0.5 * (e[0][0].re - e[1][1].re) / tr]
    }

    pub fn mean_iz(&self) -> f64 {
        let pops = self.nuclear_populations();
        let tr: f64 = pops.iter().sum();
        self.iz_values().zip(&pops).map(|(iz, p)| f64::from(iz) * p).sum::<f64>() / tr
    }

    /// `<I_z^2>` of the normalized nuclear marginal.
    pub fn iz_second_moment(&self) -> f64 {
        let pops = self.nuclear_populations();
        let tr: f64 = pops.iter().sum();
        self.iz_values()
            .zip(&pops)
            .map(|(iz, p)| f64::from(iz).powi(2) * p)
            .sum::<f64>()
            / tr
    }

    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest `|rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in a..d {
                worst = worst.max((self.rho[(a, b)] - self.rho[(b, a)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part of `rho`.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Infinite-temperature manifold with the electron polarized up:
/// `|up><up| (x) 1/W`.
pub fn thermal_manifold(spec: ManifoldSpec) -> ManifoldState {
    let w = spec.width();
    let mut rho = DMatrix::zeros(2 * w, 2 * w);
    let p = Complex64::new(1.0 / w as f64, 0.0);
    for m in 0..w {
        rho[(m, m)] = p;
    }
    ManifoldState { spec, rho }
}
