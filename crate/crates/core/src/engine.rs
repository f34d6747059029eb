//! Sense/actuate/reset cycles, full feedback sequences and lockpoint dragging.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    nuclear_dephasing_channel, optical_relaxation_channel, reset_channel, transverse_noise_channel,
    NoiseParams, RateConvention,
};
use crate::dicke::{thermal_manifold, EnsembleModel, ManifoldSpec, ManifoldState, Species};
use crate::error::{config, Result};
use crate::gates::{
    apply_flip_flop, apply_rotation, apply_sense, build_actuation_blocks, BlockEigen, GateParams,
    MINUS_Y_PHASE, SENSE_PHASE_OFFSET,
};
use crate::probe::{extract_p, FrequencyGrid, SpectralDistribution};

/// Sensing-time programme over the cycles of one sequence (ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSchedule {
    /// Linear ramp inclusive of both endpoints.
    Linear { min: f64, max: f64 },
    Fixed(f64),
}

impl TauSchedule {
    pub fn tau(&self, cycle: usize, n_cycles: usize) -> f64 {
        match *self {
            TauSchedule::Fixed(t) => t,
            TauSchedule::Linear { min, max } => {
                if n_cycles <= 1 {
                    min
                } else {
                    min + cycle as f64 * (max - min) / (n_cycles - 1) as f64
                }
            }
        }
    }
}

/// Mechanisms that can be switched off for idealized runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub no_transverse_noise: bool,
    pub no_optical_relaxation: bool,
    pub no_nuclear_dephasing: bool,
    /// Replace the species list by one species at the mean Zeeman frequency.
    pub single_species: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 4] =
        ["no_transverse_noise", "no_optical_relaxation", "no_nuclear_dephasing", "single_species"];

    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no_transverse_noise" => self.no_transverse_noise = true,
            "no_optical_relaxation" => self.no_optical_relaxation = true,
            "no_nuclear_dephasing" => self.no_nuclear_dephasing = true,
            "single_species" => self.single_species = true,
            other => return Err(config(format!("unknown ablation flag `{other}`"))),
        }
        Ok(())
    }

    /// Every dissipative mechanism off; only the reset remains non-unitary.
    pub fn unitary() -> Self {
        Self { no_transverse_noise: true, no_optical_relaxation: true, no_nuclear_dephasing: true, single_species: false }
    }

    pub fn species(&self, model: &EnsembleModel) -> Vec<Species> {
        if self.single_species && model.species.len() > 1 {
            let mean = model.species.iter().map(|s| s.omega_n).sum::<f64>() / model.species.len() as f64;
            vec![Species::new("mean", mean)]
        } else {
            model.species.clone()
        }
    }
}

/// Every knob of one feedback run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub n_cycles: usize,
    pub tau_schedule: TauSchedule,
    /// Actuation time (ns).
    pub t_act: f64,
    /// ESR detuning (MHz).
    pub delta: f64,
    /// Drag programme as `(delta, repeats)`; each repeat is a full sequence.
    pub drag: Vec<(f64, usize)>,
    /// Sense-pulse phase (rad).
    pub phi: f64,
    /// Pure nuclear dephasing rate (MHz).
    pub gamma: f64,
    /// Optical electron relaxation rate during actuation (MHz).
    pub gamma_opt: f64,
    pub convention: RateConvention,
    pub ablation: Ablation,
    /// Minimum distance (sites) between a lockpoint and a window edge.
    pub lock_margin: u32,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            n_cycles: 44,
            tau_schedule: TauSchedule::Linear { min: 30.0, max: 98.0 },
            t_act: 86.0,
            delta: 0.0,
            drag: Vec::new(),
            phi: 0.0,
            gamma: 6.0,
            gamma_opt: 1.7,
            convention: RateConvention::Angular,
            ablation: Ablation::default(),
            lock_margin: 2,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 1 {
            return Err(config("n_cycles must be at least 1"));
        }
        match self.tau_schedule {
            TauSchedule::Fixed(t) if !(t > 0.0) => return Err(config(format!("fixed tau {t} must be positive"))),
            TauSchedule::Linear { min, max } if !(min > 0.0 && min <= max) => {
                return Err(config(format!("tau ramp {min} -> {max} needs 0 < tau_min <= tau_max")))
            }
            _ => {}
        }
        if !(self.t_act >= 0.0) {
            return Err(config("actuation time must be non-negative"));
        }
        if !(self.gamma >= 0.0 && self.gamma_opt >= 0.0) {
            return Err(config("dissipation rates must be non-negative"));
        }
        if !self.delta.is_finite() || !self.phi.is_finite() {
            return Err(config("delta and phi must be finite"));
        }
        for &(d, r) in &self.drag {
            if !d.is_finite() || r == 0 {
                return Err(config("drag steps need a finite delta and at least one repeat"));
            }
        }
        Ok(())
    }

    pub fn lockpoint(&self, model: &EnsembleModel) -> f64 {
        -self.delta / model.a_c
    }

    fn gate_params(&self, model: &EnsembleModel, species: &Species, tau: f64) -> GateParams {
        GateParams {
            delta: self.delta,
            tau,
            phi: self.phi,
            t_act: self.t_act,
            omega_n: species.omega_n,
            a_c: model.a_c,
            a_nc: model.a_nc,
            xi: model.xi,
        }
    }

    fn noise_params(&self, model: &EnsembleModel, species: &Species) -> NoiseParams {
        NoiseParams {
            gamma: self.gamma,
            gamma_opt: self.gamma_opt,
            omega_n: species.omega_n,
            a_nc: model.a_nc,
            convention: self.convention,
        }
    }
}

/// Per-manifold bookkeeping emitted alongside evolved states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldDiagnostics {
    pub i: u32,
    pub cycles: usize,
    /// `1 - trace` after the last cycle.
    pub trace_leakage: f64,
    /// Flip-flop blocks whose enhancement factor was clamped to zero.
    pub clamped_blocks: usize,
    /// Smallest transverse-noise factor applied.
    pub min_transverse_factor: f64,
}

impl ManifoldDiagnostics {
    fn new(i: u32) -> Self {
        Self { i, cycles: 0, trace_leakage: 0.0, clamped_blocks: 0, min_transverse_factor: 1.0 }
    }
}

/// One cycle: `K_reset K_PD U3 K_opt U2 K_TN U1_j`.
pub fn run_cycle(
    state: &mut ManifoldState,
    cycle: usize,
    cfg: &FeedbackConfig,
    model: &EnsembleModel,
    species: &Species,
) -> ManifoldDiagnostics {
    let tau = cfg.tau_schedule.tau(cycle, cfg.n_cycles);
    let params = cfg.gate_params(model, species, tau);
    let blocks = build_actuation_blocks(&state.spec, &params);
    let mut diag = ManifoldDiagnostics::new(state.spec.i);
    let w = cycle_with_blocks(state, tau, cfg, &params, &cfg.noise_params(model, species), &blocks);
    diag.cycles = 1;
    diag.clamped_blocks = blocks.clamped;
    diag.min_transverse_factor = w;
    diag.trace_leakage = 1.0 - state.trace();
    diag
}

fn cycle_with_blocks(
    state: &mut ManifoldState,
    tau: f64,
    cfg: &FeedbackConfig,
    gate: &GateParams,
    noise: &NoiseParams,
    blocks: &BlockEigen,
) -> f64 {
    apply_rotation(state, FRAC_PI_2, cfg.phi + SENSE_PHASE_OFFSET);
    apply_sense(state, tau, gate.delta, gate.a_c, gate.omega_n);
    let w = if cfg.ablation.no_transverse_noise { 1.0 } else { transverse_noise_channel(state, tau, noise) };
    apply_rotation(state, FRAC_PI_2, MINUS_Y_PHASE);
    if !cfg.ablation.no_optical_relaxation {
        optical_relaxation_channel(state, cfg.t_act, cfg.gamma_opt);
    }
    apply_flip_flop(state, blocks, cfg.t_act);
    if !cfg.ablation.no_nuclear_dephasing {
        nuclear_dephasing_channel(state, cfg.t_act, cfg.gamma);
    }
    reset_channel(state);
    w
}

/// Runs `sequences` back-to-back sequences of `cfg.n_cycles` cycles on one
/// manifold, with the detuning held at `delta`.
fn evolve_manifold(
    state: &mut ManifoldState,
    cfg: &FeedbackConfig,
    model: &EnsembleModel,
    species: &Species,
    delta: f64,
    sequences: usize,
    diag: &mut ManifoldDiagnostics,
) {
    let cfg = FeedbackConfig { delta, ..cfg.clone() };
    let noise = cfg.noise_params(model, species);
    // The actuation blocks depend only on the manifold and species.
    let gate0 = cfg.gate_params(model, species, 0.0);
    let blocks = build_actuation_blocks(&state.spec, &gate0);
    diag.clamped_blocks = diag.clamped_blocks.max(blocks.clamped);
    for _ in 0..sequences {
        for cycle in 0..cfg.n_cycles {
            let tau = cfg.tau_schedule.tau(cycle, cfg.n_cycles);
            let gate = GateParams { tau, ..gate0 };
            let w = cycle_with_blocks(state, tau, &cfg, &gate, &noise, &blocks);
            diag.min_transverse_factor = diag.min_transverse_factor.min(w);
            diag.cycles += 1;
        }
    }
    diag.trace_leakage = 1.0 - state.trace();
}

/// Final states of every manifold for one species.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesRun {
    pub species: Species,
    pub states: Vec<ManifoldState>,
    pub diagnostics: Vec<ManifoldDiagnostics>,
}

/// Output of [`run_sequence`], ordered by species then by `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub runs: Vec<SpeciesRun>,
}

fn check_lockpoints(model: &EnsembleModel, lockpoints: &[f64], margin: u32) -> Result<()> {
    for m in &model.manifolds {
        for &lock in lockpoints {
            if !m.admits_lockpoint(lock, margin) {
                return Err(config(format!(
                    "lockpoint {lock:.3} is within {margin} sites of the edge of window [{}, {}] (I = {})",
                    m.iz_lo, m.iz_hi, m.i
                )));
            }
        }
    }
    Ok(())
}

fn thermal_states(manifolds: &[ManifoldSpec]) -> Vec<ManifoldState> {
    manifolds.iter().map(|s| thermal_manifold(*s)).collect()
}

/// Evolves every sampled manifold of every species from the thermal state
/// through one sequence of `cfg.n_cycles` cycles.
pub fn run_sequence(model: &EnsembleModel, cfg: &FeedbackConfig) -> Result<SequenceResult> {
    run_sequences(model, cfg, 1)
}

/// As [`run_sequence`] but repeats the sequence `sequences` times without
/// re-thermalizing.
pub fn run_sequences(model: &EnsembleModel, cfg: &FeedbackConfig, sequences: usize) -> Result<SequenceResult> {
    model.validate()?;
    cfg.validate()?;
    check_lockpoints(model, &[cfg.lockpoint(model)], cfg.lock_margin)?;
    let runs = cfg
        .ablation
        .species(model)
        .into_iter()
        .map(|species| {
            let (states, diagnostics): (Vec<_>, Vec<_>) = thermal_states(&model.manifolds)
                .into_par_iter()
                .map(|mut st| {
                    let mut diag = ManifoldDiagnostics::new(st.spec.i);
                    evolve_manifold(&mut st, cfg, model, &species, cfg.delta, sequences, &mut diag);
                    (st, diag)
                })
                .unzip();
            SpeciesRun { species, states, diagnostics }
        })
        .collect();
    Ok(SequenceResult { runs })
}

/// Distribution recorded after one drag step, on the absolute `A_c I_z` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DragStep {
    pub delta: f64,
    pub lockpoint: f64,
    pub distribution: SpectralDistribution,
    /// Mean polarization `<I_z>` of the weighted, species-averaged ensemble.
    pub mean_iz: f64,
}

/// Steps the detuning through `cfg.drag`, running `repeats` full sequences at
/// each value and recording the resulting distribution. Nuclear states carry
/// over between steps.
pub fn drag_lockpoint(model: &EnsembleModel, cfg: &FeedbackConfig, grid: &FrequencyGrid) -> Result<Vec<DragStep>> {
    model.validate()?;
    cfg.validate()?;
    if cfg.drag.is_empty() {
        return Err(config("drag schedule is empty"));
    }
    let locks: Vec<f64> = cfg.drag.iter().map(|&(d, _)| -d / model.a_c).collect();
    check_lockpoints(model, &locks, cfg.lock_margin)?;

    let species = cfg.ablation.species(model);
    let mut runs: Vec<SpeciesRun> = species
        .iter()
        .map(|s| SpeciesRun {
            species: s.clone(),
            states: thermal_states(&model.manifolds),
            diagnostics: model.manifolds.iter().map(|m| ManifoldDiagnostics::new(m.i)).collect(),
        })
        .collect();

    let mut steps = Vec::with_capacity(cfg.drag.len());
    for &(delta, repeats) in &cfg.drag {
        for run in &mut runs {
            let sp = run.species.clone();
            run.states.par_iter_mut().zip(run.diagnostics.par_iter_mut()).for_each(|(st, diag)| {
                evolve_manifold(st, cfg, model, &sp, delta, repeats, diag);
            });
        }
        let distribution = extract_p(&runs, model, grid, 0.0)?;
        let mean_iz = crate::probe::mean_polarization(&runs, model)?;
        steps.push(DragStep { delta, lockpoint: -delta / model.a_c, distribution, mean_iz });
    }
    Ok(steps)
}
