//! Observables: the Overhauser-shift distribution, synthetic Ramsey FIDs,
//! Fourier recovery, LDDP entropy, widths and mode finding.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::engine::SpeciesRun;
use crate::error::{domain, Error, Result};
use crate::gates::NS_TO_US;

pub use crate::fit::{fit_stretched_exponential, FitResult};

/// Uniform frequency grid (MHz), endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self { lo: -250.0, hi: 250.0, n: 1024 }
    }
}

impl FrequencyGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 || !lo.is_finite() || !hi.is_finite() {
            return Err(domain(format!("invalid frequency grid [{lo}, {hi}] with {n} points")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let d = self.step();
        (0..self.n).map(|k| self.lo + k as f64 * d).collect()
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = 0.5 * (x[k + 1] - x[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Probability density on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDistribution {
    pub freqs: Vec<f64>,
    pub dens: Vec<f64>,
}

impl SpectralDistribution {
    /// Normalizes `dens` to unit trapezoid integral.
    pub fn normalized(freqs: Vec<f64>, mut dens: Vec<f64>) -> Result<Self> {
        if freqs.len() != dens.len() || freqs.len() < 2 {
            return Err(domain("frequency and density arrays must match and hold at least two points"));
        }
        if dens.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(domain("density must be finite and non-negative"));
        }
        let total = trapezoid(&freqs, &dens);
        if !(total > 0.0) {
            return Err(Error::Numerical("distribution has no mass on the grid".into()));
        }
        dens.iter_mut().for_each(|d| *d /= total);
        Ok(Self { freqs, dens })
    }

    /// Samples `f` on `grid` and normalizes.
    pub fn from_fn(grid: &FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let x = grid.points();
        let y = x.iter().map(|&v| f(v)).collect();
        Self::normalized(x, y)
    }

    pub fn gaussian(grid: &FrequencyGrid, mean: f64, sigma: f64) -> Result<Self> {
        Self::from_fn(grid, |f| (-(f - mean).powi(2) / (2.0 * sigma * sigma)).exp())
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.freqs, &self.dens)
    }

    pub fn step(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.freqs.iter().zip(&self.dens).map(|(f, d)| f * d).collect();
        trapezoid(&self.freqs, &xy) / self.integral()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xy: Vec<f64> = self.freqs.iter().zip(&self.dens).map(|(f, d)| (f - m).powi(2) * d).collect();
        trapezoid(&self.freqs, &xy) / self.integral()
    }
}

/// Variance of `I_z` for `n` uncorrelated spins of spin `j` at infinite temperature.
pub fn thermal_iz_variance(n: f64, j: f64) -> f64 {
    n * j * (j + 1.0) / 3.0
}

/// Untruncated thermal Overhauser distribution for spin-3/2 nuclei:
/// Gaussian of variance `A_c^2 * 5N/4`.
pub fn thermal_distribution(n: f64, a_c: f64, grid: &FrequencyGrid) -> Result<SpectralDistribution> {
    SpectralDistribution::gaussian(grid, 0.0, a_c * thermal_iz_variance(n, 1.5).sqrt())
}

/// Weighted nuclear populations summed over manifolds and averaged over
/// species, as `(I_z, probability)` pairs sorted by `I_z`.
pub fn macrostate_populations(runs: &[SpeciesRun]) -> Result<Vec<(i32, f64)>> {
    if runs.is_empty() || runs.iter().any(|r| r.states.is_empty()) {
        return Err(domain("no evolved manifolds to extract a distribution from"));
    }
    let lo = runs.iter().flat_map(|r| r.states.iter().map(|s| s.spec.iz_lo)).min().unwrap();
    let hi = runs.iter().flat_map(|r| r.states.iter().map(|s| s.spec.iz_hi)).max().unwrap();
    let mut acc = vec![0.0; (hi - lo + 1) as usize];
    let species_weight = 1.0 / runs.len() as f64;
    for run in runs {
        for st in &run.states {
            let w = st.spec.weight * species_weight;
            for (k, p) in st.nuclear_populations().into_iter().enumerate() {
                acc[(st.spec.iz_lo - lo) as usize + k] += w * p;
            }
        }
    }
    Ok(acc.into_iter().enumerate().map(|(k, p)| (lo + k as i32, p)).collect())
}

/// Mean `<I_z>` of the weighted, species-averaged ensemble.
pub fn mean_polarization(runs: &[SpeciesRun], _model: &crate::dicke::EnsembleModel) -> Result<f64> {
    let pops = macrostate_populations(runs)?;
    let total: f64 = pops.iter().map(|(_, p)| p).sum();
    Ok(pops.iter().map(|&(iz, p)| f64::from(iz) * p).sum::<f64>() / total)
}

/// Bins point masses, each spread uniformly over a cell `[c - width/2, c + width/2]`,
/// onto the grid by exact overlap with bins centred on the grid points.
pub fn bin_cells(grid: &FrequencyGrid, cells: &[(f64, f64)], width: f64) -> Result<SpectralDistribution> {
    let x = grid.points();
    let d = grid.step();
    let mut mass = vec![0.0; grid.n];
    for &(centre, m) in cells {
        if m == 0.0 {
            continue;
        }
        let (a, b) = (centre - 0.5 * width, centre + 0.5 * width);
        let k_lo = (((a - grid.lo) / d + 0.5).floor().max(0.0)) as usize;
        let k_hi = (((b - grid.lo) / d + 0.5).floor().max(0.0) as usize).min(grid.n - 1);
        for k in k_lo..=k_hi {
            let (e0, e1) = (x[k] - 0.5 * d, x[k] + 0.5 * d);
            let overlap = (b.min(e1) - a.max(e0)).max(0.0);
            mass[k] += m * overlap / width;
        }
    }
    SpectralDistribution::normalized(x, mass.into_iter().map(|m| m / d).collect())
}

/// `p(A_c (I_z - reference))` from evolved states: manifold populations
/// weighted by `w'`, species averaged with equal weight, each macrostate
/// occupying a cell of width `A_c`.
pub fn extract_p(
    runs: &[SpeciesRun],
    model: &crate::dicke::EnsembleModel,
    grid: &FrequencyGrid,
    reference: f64,
) -> Result<SpectralDistribution> {
    let cells: Vec<(f64, f64)> = macrostate_populations(runs)?
        .into_iter()
        .map(|(iz, p)| (model.a_c * (f64::from(iz) - reference), p))
        .collect();
    bin_cells(grid, &cells, model.a_c)
}

/// Ramsey signal `<S_z(tau)>` sampled on a time grid (ns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Serrodyne carrier (MHz).
    pub omega_serr: f64,
}

impl FidTrace {
    pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }

    /// Constant sample spacing (ns), or an error if the grid is not uniform.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.times.len() < 2 || self.times.len() != self.values.len() {
            return Err(domain("FID needs matching time and value arrays with at least two samples"));
        }
        let dt = self.times[1] - self.times[0];
        let span = self.times[self.times.len() - 1] - self.times[0];
        if !(dt > 0.0) {
            return Err(domain("FID times must increase"));
        }
        for (k, t) in self.times.iter().enumerate() {
            if (t - (self.times[0] + k as f64 * dt)).abs() > 1e-9 * span.max(1.0) {
                return Err(domain(format!("FID time grid is not uniform at sample {k}")));
            }
        }
        Ok(dt)
    }
}

/// `1/2 * integral p(f) cos(2 pi (f + omega_serr) tau) df`, trapezoid rule.
pub fn synthesize_fid(p: &SpectralDistribution, times: &[f64], omega_serr: f64) -> FidTrace {
    let w: Vec<f64> = trapezoid_weights(&p.freqs).iter().zip(&p.dens).map(|(a, b)| a * b).collect();
    let norm: f64 = w.iter().sum();
    let values = times
        .iter()
        .map(|&t| {
            let t_us = t * NS_TO_US;
            let s: f64 = p.freqs.iter().zip(&w).map(|(f, wk)| wk * (2.0 * PI * (f + omega_serr) * t_us).cos()).sum();
            0.5 * s / norm
        })
        .collect();
    FidTrace { times: times.to_vec(), values, omega_serr }
}

/// Recovers `p(f)` from a FID starting at `tau = 0` by demodulating the
/// carrier and taking the discrete Fourier transform of the one-sided trace.
/// Resolution is one over the trace length; the mirror image near
/// `-2 omega_serr` is excluded.
pub fn fft_to_distribution(fid: &FidTrace) -> Result<SpectralDistribution> {
    let dt = fid.uniform_step()?;
    if fid.times[0].abs() > 1e-9 * dt {
        return Err(domain("FID must start at tau = 0 for Fourier recovery"));
    }
    let m = fid.times.len();
    let dt_us = dt * NS_TO_US;
    let mut buf: Vec<Complex64> = fid
        .times
        .iter()
        .zip(&fid.values)
        .map(|(&t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * fid.omega_serr * t * NS_TO_US))
        .collect();
    let y0 = buf[0];
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let df = 1.0 / (m as f64 * dt_us);
    let mut pts: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let kk = if k < m.div_ceil(2) { k as f64 } else { k as f64 - m as f64 };
            let est = 4.0 * dt_us * (2.0 * buf[k] - y0).re;
            (kk * df, est.max(0.0))
        })
        .filter(|(f, _)| *f > -fid.omega_serr)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (freqs, dens) = pts.into_iter().unzip();
    SpectralDistribution::normalized(freqs, dens)
}

/// Parameters of the limiting-density-of-discrete-points entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LddpParams {
    /// Reference measure `m` (1/MHz).
    pub m_density: f64,
    pub n_points: f64,
}

impl Default for LddpParams {
    /// Uniform measure of 2 GHz^-1 over a 500 MHz range with 400 points.
    fn default() -> Self {
        Self { m_density: 2e-3, n_points: 400.0 }
    }
}

/// `S_p = ln N - integral p ln(p/m) df`, with `0 ln 0 = 0`.
pub fn lddp_entropy(p: &SpectralDistribution, params: LddpParams) -> f64 {
    let y: Vec<f64> = p
        .dens
        .iter()
        .map(|&d| if d > 0.0 { d * (d / params.m_density).ln() } else { 0.0 })
        .collect();
    params.n_points.ln() - trapezoid(&p.freqs, &y)
}

/// Full width at half maximum of the tallest mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fwhm {
    pub width: f64,
    pub multimodal: bool,
}

fn half_width_bounds(p: &SpectralDistribution, peak: usize, lo: usize, hi: usize) -> (f64, f64) {
    let (x, y) = (&p.freqs, &p.dens);
    let half = 0.5 * y[peak];
    let mut left = x[lo];
    for k in (lo..peak).rev() {
        if y[k] < half {
            left = x[k] + (half - y[k]) / (y[k + 1] - y[k]) * (x[k + 1] - x[k]);
            break;
        }
    }
    let mut right = x[hi];
    for k in peak + 1..=hi {
        if y[k] < half {
            right = x[k - 1] + (y[k - 1] - half) / (y[k - 1] - y[k]) * (x[k] - x[k - 1]);
            break;
        }
    }
    (left, right)
}

pub fn fwhm(p: &SpectralDistribution) -> Fwhm {
    let peak = argmax(&p.dens);
    let (l, r) = half_width_bounds(p, peak, 0, p.dens.len() - 1);
    Fwhm { width: r - l, multimodal: find_modes(p).len() > 1 }
}

fn argmax(y: &[f64]) -> usize {
    y.iter().enumerate().fold(0, |best, (k, v)| if *v > y[best] { k } else { best })
}

/// One peak of a multimodal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub centre: f64,
    pub height: f64,
    pub prominence: f64,
    /// Probability mass between the neighbouring valleys.
    pub weight: f64,
    pub fwhm: f64,
}

/// Thresholds for [`find_modes_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCriteria {
    /// Minimum height relative to the global maximum.
    pub min_height: f64,
    /// Minimum prominence relative to the mode's own height.
    pub min_prominence: f64,
}

impl Default for ModeCriteria {
    fn default() -> Self {
        Self { min_height: 0.05, min_prominence: 0.5 }
    }
}

pub fn find_modes(p: &SpectralDistribution) -> Vec<Mode> {
    find_modes_with(p, ModeCriteria::default())
}

/// Plateau-aware local maxima filtered by height and topographic prominence.
pub fn find_modes_with(p: &SpectralDistribution, crit: ModeCriteria) -> Vec<Mode> {
    let y = &p.dens;
    let n = y.len();
    let gmax = y.iter().cloned().fold(0.0, f64::max);
    if !(gmax > 0.0) {
        return Vec::new();
    }
    // Candidate peaks: centre index of each strictly-bounded plateau.
    let mut peaks = Vec::new();
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && y[j + 1] == y[k] {
            j += 1;
        }
        let left_lower = k == 0 || y[k - 1] < y[k];
        let right_lower = j == n - 1 || y[j + 1] < y[k];
        if left_lower && right_lower && y[k] > 0.0 {
            peaks.push((k + j) / 2);
        }
        k = j + 1;
    }
    let prominence = |pk: usize| {
        let h = y[pk];
        let mut lmin = h;
        let mut i = pk;
        while i > 0 {
            i -= 1;
            if y[i] > h {
                break;
            }
            lmin = lmin.min(y[i]);
        }
        let mut rmin = h;
        let mut i = pk;
        while i + 1 < n {
            i += 1;
            if y[i] > h {
                break;
            }
            rmin = rmin.min(y[i]);
        }
        h - lmin.max(rmin)
    };
    let kept: Vec<(usize, f64)> = peaks
        .into_iter()
        .filter(|&pk| y[pk] >= crit.min_height * gmax)
        .map(|pk| (pk, prominence(pk)))
        .filter(|&(pk, prom)| prom >= crit.min_prominence * y[pk])
        .collect();

    // Valleys between consecutive kept peaks bound each mode.
    let mut bounds = vec![0];
    for w in kept.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        let v = (a..=b).fold(a, |m, i| if y[i] < y[m] { i } else { m });
        bounds.push(v);
    }
    bounds.push(n - 1);
    kept.iter()
        .enumerate()
        .map(|(idx, &(pk, prom))| {
            let (lo, hi) = (bounds[idx], bounds[idx + 1]);
            let weight = trapezoid(&p.freqs[lo..=hi], &y[lo..=hi]);
            let (l, r) = half_width_bounds(p, pk, lo, hi);
            Mode { centre: p.freqs[pk], height: y[pk], prominence: prom, weight, fwhm: r - l }
        })
        .collect()
}

/// Ensemble size from a Gaussian-envelope coherence time for spin-3/2 nuclei:
/// `N = 4 / (5 * 2 pi^2 A_c^2 T2*^2)`.
pub fn estimate_n(t2_star_ns: f64, a_c: f64) -> Result<f64> {
    if !(t2_star_ns > 0.0 && a_c > 0.0) {
        return Err(domain("T2* and A_c must be positive"));
    }
    let t = t2_star_ns * NS_TO_US;
    Ok(4.0 / (5.0 * 2.0 * PI * PI * a_c * a_c * t * t))
}

/// Inhomogeneous coherence time of a Gaussian distribution of width `sigma` (MHz), in ns.
pub fn gaussian_t2_star(sigma: f64) -> f64 {
    2f64.sqrt() / (2.0 * PI * sigma) / NS_TO_US
}

/// Number of macrostates spanned: FWHM in units of `A_c`.
pub fn macrostate_count(p: &SpectralDistribution, a_c: f64) -> f64 {
    fwhm(p).width / a_c
}
