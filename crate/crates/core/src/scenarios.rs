//! Packaged experiments: parameter sweeps with ablations, and the
//! distribution-engineering scans (bimodality, latticed multistability).

use serde::{Deserialize, Serialize};

use crate::dicke::{sample_manifolds, EnsembleModel};
use crate::engine::{run_sequence, FeedbackConfig, TauSchedule};
use crate::error::{config, Result};
use crate::gates::NS_TO_US;
use crate::probe::{
    extract_p, find_modes, fit_stretched_exponential, fwhm, lddp_entropy, synthesize_fid, FidTrace, FitResult,
    FrequencyGrid, LddpParams, Mode, SpectralDistribution,
};

/// Window fraction for the engineering scans. The nominal `1/14` windows
/// cannot hold lattice points two capture ranges out at long sensing times.
pub const ENGINEERING_WINDOW_FRACTION: f64 = 0.25;

/// Separation of the two modes of the balanced bimodal state, in macrostates.
pub const BIMODAL_SEPARATION: f64 = 55.0;

/// Fixed sensing time (ns) whose capture range `1/(A_c tau)` equals
/// [`BIMODAL_SEPARATION`]: at `phi = pi` the two lockpoints then sit inside
/// the feedback bandwidth and no outer lattice points are populated.
pub fn bimodal_tau(a_c: f64) -> f64 {
    1.0 / (BIMODAL_SEPARATION * a_c) / NS_TO_US
}

/// Nominal model with windows widened to [`ENGINEERING_WINDOW_FRACTION`].
pub fn engineering_model() -> EnsembleModel {
    let mut m = EnsembleModel::nominal();
    m.manifolds = sample_manifolds(m.n, 46, 14, ENGINEERING_WINDOW_FRACTION).expect("valid sampling");
    m
}

/// How a distribution is turned into scalar observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub grid: FrequencyGrid,
    /// Serrodyne carrier (MHz).
    pub omega_serr: f64,
    /// FID window (ns).
    pub fid_end: f64,
    pub fid_points: usize,
    pub lddp: LddpParams,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { grid: FrequencyGrid::default(), omega_serr: 60.0, fid_end: 1200.0, fid_points: 1201, lddp: LddpParams::default() }
    }
}

impl ProbeSettings {
    pub fn fid_times(&self) -> Vec<f64> {
        FidTrace::uniform_times(self.fid_end, self.fid_points)
    }
}

/// Everything measured on one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    pub distribution: SpectralDistribution,
    pub fid: FidTrace,
    pub fit: FitResult,
    pub entropy: f64,
    pub fwhm: f64,
    pub multimodal: bool,
}

pub fn observe(p: SpectralDistribution, probe: &ProbeSettings) -> Result<Observables> {
    let fid = synthesize_fid(&p, &probe.fid_times(), probe.omega_serr);
    let fit = fit_stretched_exponential(&fid)?;
    let w = fwhm(&p);
    Ok(Observables { entropy: lddp_entropy(&p, probe.lddp), fwhm: w.width, multimodal: w.multimodal, distribution: p, fid, fit })
}

/// Runs one feedback sequence from thermal and measures the distribution
/// about the programmed lockpoint.
pub fn simulate(model: &EnsembleModel, cfg: &FeedbackConfig, probe: &ProbeSettings) -> Result<Observables> {
    let res = run_sequence(model, cfg)?;
    let p = extract_p(&res.runs, model, &probe.grid, cfg.lockpoint(model))?;
    observe(p, probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// End of the linear sensing-time ramp (ns).
    TauMax,
    /// Actuation time (ns).
    T,
    /// Sense phase (rad).
    Phi,
    /// Constant sensing time (ns).
    TauFixed,
    /// Constant ESR detuning (MHz).
    DeltaSchedule,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TauMax => "tau_max",
            Self::T => "T",
            Self::Phi => "phi",
            Self::TauFixed => "tau_fixed",
            Self::DeltaSchedule => "delta_schedule",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "tau_max" => Self::TauMax,
            "T" => Self::T,
            "phi" => Self::Phi,
            "tau_fixed" => Self::TauFixed,
            "delta_schedule" => Self::DeltaSchedule,
            other => return Err(config(format!("unknown sweep parameter `{other}`"))),
        })
    }

    pub fn apply(&self, base: &FeedbackConfig, value: f64) -> FeedbackConfig {
        let mut cfg = base.clone();
        match self {
            Self::TauMax => {
                let min = match base.tau_schedule {
                    TauSchedule::Linear { min, .. } => min,
                    TauSchedule::Fixed(t) => t,
                };
                cfg.tau_schedule = TauSchedule::Linear { min, max: value };
            }
            Self::T => cfg.t_act = value,
            Self::Phi => cfg.phi = value,
            Self::TauFixed => cfg.tau_schedule = TauSchedule::Fixed(value),
            Self::DeltaSchedule => cfg.delta = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Base configuration, ablation flags included.
    pub base: FeedbackConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(config("sweep grid is empty"));
        }
        let inc = self.values.windows(2).all(|w| w[1] > w[0]);
        let dec = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(config("sweep grid must be strictly monotone"));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub t2_star: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub fwhm: f64,
    /// Failure at this grid point; the numeric fields are NaN when set.
    pub error: Option<String>,
}

/// One row per grid value, in grid order. A failing point is recorded in its
/// row and the sweep continues.
pub fn sweep(model: &EnsembleModel, spec: &SweepSpec, probe: &ProbeSettings) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    Ok(spec
        .values
        .iter()
        .map(|&v| match simulate(model, &spec.parameter.apply(&spec.base, v), probe) {
            Ok(o) => SweepRow { value: v, t2_star: o.fit.t2_star, alpha: o.fit.alpha, entropy: o.entropy, fwhm: o.fwhm, error: None },
            Err(e) => SweepRow {
                value: v,
                t2_star: f64::NAN,
                alpha: f64::NAN,
                entropy: f64::NAN,
                fwhm: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Grid value with the largest fitted T2* among successful rows.
pub fn argmax_t2(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.error.is_none() && r.t2_star.is_finite())
        .max_by(|a, b| a.t2_star.total_cmp(&b.t2_star))
        .map(|r| r.value)
}

/// Distribution of one scan point plus its mode decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub value: f64,
    pub distribution: SpectralDistribution,
    pub modes: Vec<Mode>,
    pub entropy: f64,
}

fn scan_point(model: &EnsembleModel, cfg: &FeedbackConfig, value: f64, probe: &ProbeSettings) -> Result<ScanPoint> {
    let res = run_sequence(model, cfg)?;
    let p = extract_p(&res.runs, model, &probe.grid, cfg.lockpoint(model))?;
    Ok(ScanPoint { value, modes: find_modes(&p), entropy: lddp_entropy(&p, probe.lddp), distribution: p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalRow {
    pub phi: f64,
    pub mode_count: usize,
    /// Distance between the two tallest modes (MHz); NaN for one mode.
    pub splitting: f64,
    /// Weight of the tallest mode over that of the second tallest.
    pub weight_ratio: f64,
    pub entropy: f64,
}

impl BimodalRow {
    fn from_point(pt: &ScanPoint) -> Self {
        let mut by_height = pt.modes.clone();
        by_height.sort_by(|a, b| b.height.total_cmp(&a.height));
        let (splitting, weight_ratio) = match by_height.as_slice() {
            [a, b, ..] => ((a.centre - b.centre).abs(), a.weight / b.weight),
            _ => (f64::NAN, f64::INFINITY),
        };
        Self { phi: pt.value, mode_count: pt.modes.len(), splitting, weight_ratio, entropy: pt.entropy }
    }
}

fn require_fixed_tau(cfg: &FeedbackConfig) -> Result<f64> {
    match cfg.tau_schedule {
        TauSchedule::Fixed(t) => Ok(t),
        TauSchedule::Linear { .. } => Err(config("this scan needs a fixed sensing time")),
    }
}

/// Sense-phase scan at fixed sensing time.
pub fn bimodal_scan(
    model: &EnsembleModel,
    phis: &[f64],
    cfg: &FeedbackConfig,
    probe: &ProbeSettings,
) -> Result<(Vec<BimodalRow>, Vec<ScanPoint>)> {
    require_fixed_tau(cfg)?;
    let pts = phis
        .iter()
        .map(|&phi| scan_point(model, &FeedbackConfig { phi, ..cfg.clone() }, phi, probe))
        .collect::<Result<Vec<_>>>()?;
    Ok((pts.iter().map(BimodalRow::from_point).collect(), pts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistabilityRow {
    /// ns
    pub tau: f64,
    pub mode_count: usize,
    /// Mean distance between adjacent modes (MHz); NaN for one mode.
    pub spacing: f64,
    /// `1/tau` (MHz).
    pub expected_spacing: f64,
    pub widths: Vec<f64>,
    pub entropy: f64,
}

/// Fixed-sensing-time scan from a thermal start.
pub fn multistability_scan(
    model: &EnsembleModel,
    taus: &[f64],
    cfg: &FeedbackConfig,
    probe: &ProbeSettings,
) -> Result<(Vec<MultistabilityRow>, Vec<ScanPoint>)> {
    let pts = taus
        .iter()
        .map(|&tau| {
            let c = FeedbackConfig { tau_schedule: TauSchedule::Fixed(tau), ..cfg.clone() };
            scan_point(model, &c, tau, probe)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = pts
        .iter()
        .map(|pt| {
            let n = pt.modes.len();
            let spacing = if n > 1 {
                (pt.modes[n - 1].centre - pt.modes[0].centre) / (n - 1) as f64
            } else {
                f64::NAN
            };
            MultistabilityRow {
                tau: pt.value,
                mode_count: n,
                spacing,
                expected_spacing: 1.0 / (pt.value * NS_TO_US),
                widths: pt.modes.iter().map(|m| m.fwhm).collect(),
                entropy: pt.entropy,
            }
        })
        .collect();
    Ok((rows, pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Ablation;

    fn small_model() -> EnsembleModel {
        let mut m = EnsembleModel::nominal();
        m.manifolds = sample_manifolds(m.n, 6, 56, 1.0 / 14.0).unwrap();
        m
    }

    #[test]
    fn sweep_parameters_touch_one_field() {
        let base = FeedbackConfig::default();
        let c = SweepParameter::TauMax.apply(&base, 150.0);
        assert_eq!(c.tau_schedule, TauSchedule::Linear { min: 30.0, max: 150.0 });
        assert_eq!(FeedbackConfig { tau_schedule: base.tau_schedule, ..c }, base);
        assert_eq!(SweepParameter::T.apply(&base, 120.0).t_act, 120.0);
        assert_eq!(SweepParameter::TauFixed.apply(&base, 50.0).tau_schedule, TauSchedule::Fixed(50.0));
        for p in ["tau_max", "T", "phi", "tau_fixed", "delta_schedule"] {
            assert_eq!(SweepParameter::parse(p).unwrap().name(), p);
        }
        assert!(SweepParameter::parse("omega").is_err());
    }

    #[test]
    fn grid_must_be_monotone() {
        let spec = SweepSpec { parameter: SweepParameter::T, values: vec![10.0, 30.0, 20.0], base: FeedbackConfig::default() };
        assert!(spec.validate().is_err());
        let empty = SweepSpec { values: vec![], ..spec.clone() };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn failing_points_stay_in_their_rows() {
        let model = small_model();
        let spec = SweepSpec {
            parameter: SweepParameter::DeltaSchedule,
            values: vec![0.0, 500.0],
            base: FeedbackConfig { n_cycles: 4, ..FeedbackConfig::default() },
        };
        let rows = sweep(&model, &spec, &ProbeSettings::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some() && rows[1].t2_star.is_nan());
        assert_eq!(argmax_t2(&rows), Some(0.0));
    }

    #[test]
    fn sweeps_are_reproducible() {
        let model = small_model();
        let spec = SweepSpec {
            parameter: SweepParameter::TauMax,
            values: vec![60.0, 90.0],
            base: FeedbackConfig { n_cycles: 8, ..FeedbackConfig::default() },
        };
        let a = sweep(&model, &spec, &ProbeSettings::default()).unwrap();
        let b = sweep(&model, &spec, &ProbeSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_ablations_leave_unitary_limit() {
        let a = Ablation::unitary();
        assert!(a.no_transverse_noise && a.no_optical_relaxation && a.no_nuclear_dephasing);
        let mut b = Ablation::default();
        for f in Ablation::FLAGS.iter().take(3) {
            b.set(f).unwrap();
        }
        assert_eq!(a, b);
        assert!(b.set("bogus").is_err());
    }

    #[test]
    fn scans_need_fixed_tau_where_stated() {
        let model = small_model();
        let cfg = FeedbackConfig::default();
        assert!(bimodal_scan(&model, &[0.0], &cfg, &ProbeSettings::default()).is_err());
    }
}
