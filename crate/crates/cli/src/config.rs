//! TOML run configuration. Units live in key names (`tau_min_ns`, `A_c_MHz`);
//! unknown keys and keys missing their unit suffix are rejected with the
//! offending key path.

use std::collections::BTreeSet;
use std::path::Path;

use nucfeed_core::channels::RateConvention;
use nucfeed_core::dicke::{sample_manifolds, EnsembleModel, Species};
use nucfeed_core::engine::{Ablation, FeedbackConfig, TauSchedule};
use nucfeed_core::probe::{FrequencyGrid, LddpParams};
use nucfeed_core::scenarios::{bimodal_tau, ProbeSettings, SweepParameter, ENGINEERING_WINDOW_FRACTION};
use serde::Serialize;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSettings {
    pub n: u32,
    pub manifold_count: u32,
    pub manifold_spacing: u32,
    pub window_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSettings {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSettings {
    pub window_fraction: f64,
    /// Fixed sensing time for the phase scan (ns).
    pub phi_tau_ns: f64,
    pub phi_values: Vec<f64>,
    pub tau_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DragSettings {
    pub deltas_mhz: Vec<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiclassicalSettings {
    pub tau_ns: f64,
    pub gamma_d_hz: f64,
    pub iz_lock: f64,
    pub iz_lo: f64,
    pub iz_hi: f64,
    pub curve_points: usize,
    pub t_end_us: f64,
    pub dt_us: f64,
    pub starts: Vec<f64>,
}

/// Fully validated configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model_settings: ModelSettings,
    pub model: EnsembleModel,
    pub feedback: FeedbackConfig,
    pub probe: ProbeSettings,
    pub sweep: SweepSettings,
    pub scan: ScanSettings,
    pub drag: DragSettings,
    pub semiclassical: SemiclassicalSettings,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Section reader that tracks which keys were consumed.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &str) -> Result<Self> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => return Err(err(name, "expected a table")),
        };
        Ok(Self { path: name.to_string(), table, seen: BTreeSet::new() })
    }

    fn key(&self, k: &str) -> String {
        format!("{}.{}", self.path, k)
    }

    fn raw(&mut self, k: &str) -> Option<&'a Value> {
        self.seen.insert(k.to_string());
        self.table.and_then(|t| t.get(k))
    }

    fn f64(&mut self, k: &str, default: f64) -> Result<f64> {
        match self.raw(k) {
            None => Ok(default),
            Some(Value::Float(x)) => Ok(*x),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(_) => Err(err(self.key(k), "expected a number")),
        }
    }

    fn opt_f64(&mut self, k: &str) -> Result<Option<f64>> {
        match self.raw(k) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(err(self.key(k), "expected a number")),
        }
    }

    fn uint(&mut self, k: &str, default: u64) -> Result<u64> {
        match self.raw(k) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(err(self.key(k), "expected a non-negative integer")),
        }
    }

    fn string(&mut self, k: &str, default: &str) -> Result<String> {
        match self.raw(k) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(err(self.key(k), "expected a string")),
        }
    }

    fn f64_list(&mut self, k: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.raw(k) {
            None => Ok(default),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(n) => Ok(*n as f64),
                    _ => Err(err(format!("{}[{i}]", self.key(k)), "expected a number")),
                })
                .collect(),
            Some(_) => Err(err(self.key(k), "expected an array of numbers")),
        }
    }

    fn string_list(&mut self, k: &str) -> Result<Vec<String>> {
        match self.raw(k) {
            None => Ok(Vec::new()),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(err(format!("{}[{i}]", self.key(k)), "expected a string")),
                })
                .collect(),
            Some(_) => Err(err(self.key(k), "expected an array of strings")),
        }
    }

    /// Rejects keys that were never read, pointing out missing unit suffixes.
    fn finish(self) -> Result<()> {
        let Some(t) = self.table else { return Ok(()) };
        for k in t.keys() {
            if self.seen.contains(k) {
                continue;
            }
            let suffixed: Vec<&String> = self.seen.iter().filter(|s| s.starts_with(&format!("{k}_"))).collect();
            return Err(match suffixed.first() {
                Some(s) => err(format!("{}.{k}", self.path), format!("missing unit suffix (did you mean `{s}`?)")),
                None => err(format!("{}.{k}", self.path), "unknown key"),
            });
        }
        Ok(())
    }
}

const SECTIONS: [&str; 8] = ["model", "feedback", "noise", "probe", "sweep", "scan", "drag", "semiclassical"];

pub fn parse_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| err("", format!("invalid TOML: {}", e.message())))?;
    for k in root.keys() {
        if !SECTIONS.contains(&k.as_str()) {
            return Err(err(k.as_str(), "unknown section"));
        }
    }

    // [model]
    let mut s = Section::new(&root, "model")?;
    let n = s.uint("N", 49_000)?;
    let a_c = s.f64("A_c_MHz", 0.63)?;
    let a_nc = s.f64("A_nc_MHz", 0.156)?;
    let xi = s.f64("xi", 0.42)?;
    let manifold_count = s.uint("manifold_count", 46)?;
    let manifold_spacing = s.uint("manifold_spacing", 14)?;
    let window_fraction = s.f64("window_fraction", 1.0 / 14.0)?;
    let species = match s.raw("species") {
        None => vec![Species::new("As", 25.3), Species::new("In", 32.7)],
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_species(v, &format!("model.species[{i}]")))
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(err("model.species", "expected an array of tables")),
    };
    s.finish()?;
    let n = u32::try_from(n).map_err(|_| err("model.N", "too large"))?;
    let count = u32::try_from(manifold_count).map_err(|_| err("model.manifold_count", "too large"))?;
    let spacing = u32::try_from(manifold_spacing).map_err(|_| err("model.manifold_spacing", "too large"))?;
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(err("model.window_fraction", "must lie in (0, 1]"));
    }
    let manifolds = sample_manifolds(n, count, spacing, window_fraction).map_err(|e| err("model", e.to_string()))?;
    let model = EnsembleModel { n, a_c, a_nc, xi, species, manifolds };
    model.validate().map_err(|e| err("model", e.to_string()))?;

    // [feedback] and [noise]
    let mut f = Section::new(&root, "feedback")?;
    let n_cycles = f.uint("n_cycles", 44)? as usize;
    let tau_min = f.f64("tau_min_ns", 30.0)?;
    let tau_max = f.f64("tau_max_ns", 98.0)?;
    let tau_fixed = f.opt_f64("tau_fixed_ns")?;
    let t_act = f.f64("T_ns", 86.0)?;
    let delta = f.f64("delta_MHz", 0.0)?;
    let phi = f.f64("phi_rad", 0.0)?;
    let lock_margin = f.uint("lock_margin_sites", 2)?;
    let mut ablation = Ablation::default();
    for flag in f.string_list("ablate")? {
        ablation.set(&flag).map_err(|e| err("feedback.ablate", e.to_string()))?;
    }
    f.finish()?;
    if n_cycles < 1 {
        return Err(err("feedback.n_cycles", "must be at least 1"));
    }
    if !(tau_min > 0.0) {
        return Err(err("feedback.tau_min_ns", "must be positive"));
    }
    if tau_min > tau_max {
        return Err(err("feedback.tau_min_ns", format!("{tau_min} exceeds tau_max_ns = {tau_max}")));
    }
    let tau_schedule = match tau_fixed {
        Some(t) if !(t > 0.0) => return Err(err("feedback.tau_fixed_ns", "must be positive")),
        Some(t) => TauSchedule::Fixed(t),
        None => TauSchedule::Linear { min: tau_min, max: tau_max },
    };
    if !(t_act >= 0.0) {
        return Err(err("feedback.T_ns", "must be non-negative"));
    }

    let mut ns = Section::new(&root, "noise")?;
    let gamma = ns.f64("Gamma_MHz", 6.0)?;
    let gamma_opt = ns.f64("Gamma_opt_MHz", 1.7)?;
    let convention = match ns.string("rate_convention", "angular")?.as_str() {
        "angular" => RateConvention::Angular,
        "ordinary" => RateConvention::Ordinary,
        other => return Err(err("noise.rate_convention", format!("`{other}` is not `angular` or `ordinary`"))),
    };
    ns.finish()?;
    if !(gamma >= 0.0) {
        return Err(err("noise.Gamma_MHz", "must be non-negative"));
    }
    if !(gamma_opt >= 0.0) {
        return Err(err("noise.Gamma_opt_MHz", "must be non-negative"));
    }
    let feedback = FeedbackConfig {
        n_cycles,
        tau_schedule,
        t_act,
        delta,
        drag: Vec::new(),
        phi,
        gamma,
        gamma_opt,
        convention,
        ablation,
        lock_margin: u32::try_from(lock_margin).map_err(|_| err("feedback.lock_margin_sites", "too large"))?,
    };
    feedback.validate().map_err(|e| err("feedback", e.to_string()))?;

    // [probe]
    let mut p = Section::new(&root, "probe")?;
    let d = ProbeSettings::default();
    let omega_serr = p.f64("omega_serr_MHz", d.omega_serr)?;
    let lo = p.f64("grid_lo_MHz", d.grid.lo)?;
    let hi = p.f64("grid_hi_MHz", d.grid.hi)?;
    let points = p.uint("grid_points", d.grid.n as u64)? as usize;
    let fid_end = p.f64("fid_end_ns", d.fid_end)?;
    let fid_points = p.uint("fid_points", d.fid_points as u64)? as usize;
    let m_density = p.f64("lddp_m_per_MHz", d.lddp.m_density)?;
    let lddp_points = p.uint("lddp_points", d.lddp.n_points as u64)?;
    p.finish()?;
    let grid = FrequencyGrid::new(lo, hi, points).map_err(|e| err("probe.grid_points", e.to_string()))?;
    if !(fid_end > 0.0) {
        return Err(err("probe.fid_end_ns", "must be positive"));
    }
    if fid_points < 20 {
        return Err(err("probe.fid_points", "at least 20 samples are needed for a fit"));
    }
    if !(m_density > 0.0) || lddp_points < 1 {
        return Err(err("probe.lddp_m_per_MHz", "LDDP measure and point count must be positive"));
    }
    let probe = ProbeSettings {
        grid,
        omega_serr,
        fid_end,
        fid_points,
        lddp: LddpParams { m_density, n_points: lddp_points as f64 },
    };

    // [sweep]
    let mut sw = Section::new(&root, "sweep")?;
    let parameter = SweepParameter::parse(&sw.string("parameter", "tau_max")?).map_err(|e| err("sweep.parameter", e.to_string()))?;
    let (unit_key, default_values) = match parameter {
        SweepParameter::TauMax => ("values_ns", linspace(40.0, 450.0, 16)),
        SweepParameter::T => ("values_ns", linspace(40.0, 250.0, 15)),
        SweepParameter::TauFixed => ("values_ns", linspace(30.0, 250.0, 12)),
        SweepParameter::Phi => ("values_rad", linspace(0.0, 2.0 * std::f64::consts::PI, 13)),
        SweepParameter::DeltaSchedule => ("values_MHz", linspace(-5.0, 5.0, 11)),
    };
    let values = sw.f64_list(unit_key, default_values)?;
    for other in ["values_ns", "values_rad", "values_MHz"] {
        if other != unit_key && sw.table.is_some_and(|t| t.contains_key(other)) {
            return Err(err(format!("sweep.{other}"), format!("parameter `{}` takes `{unit_key}`", parameter.name())));
        }
        sw.seen.insert(other.to_string());
    }
    sw.finish()?;
    validate_grid(&values, &format!("sweep.{unit_key}"))?;

    // [scan]
    let mut sc = Section::new(&root, "scan")?;
    let scan = ScanSettings {
        window_fraction: sc.f64("window_fraction", ENGINEERING_WINDOW_FRACTION)?,
        phi_tau_ns: sc.f64("phi_tau_ns", bimodal_tau(model.a_c))?,
        phi_values: sc.f64_list("phi_values_rad", linspace(0.0, 2.0 * std::f64::consts::PI, 13))?,
        tau_values: sc.f64_list("tau_values_ns", vec![30.0, 35.0, 40.0, 60.0, 80.0, 100.0, 125.0, 150.0, 200.0, 250.0])?,
    };
    sc.finish()?;
    if !(scan.window_fraction > 0.0 && scan.window_fraction <= 1.0) {
        return Err(err("scan.window_fraction", "must lie in (0, 1]"));
    }
    if !(scan.phi_tau_ns > 0.0) {
        return Err(err("scan.phi_tau_ns", "must be positive"));
    }
    validate_grid(&scan.phi_values, "scan.phi_values_rad")?;
    validate_grid(&scan.tau_values, "scan.tau_values_ns")?;
    if scan.tau_values.iter().any(|t| !(*t > 0.0)) {
        return Err(err("scan.tau_values_ns", "sensing times must be positive"));
    }

    // [drag]
    let mut dr = Section::new(&root, "drag")?;
    let step = 2.0 * a_c;
    let drag = DragSettings {
        deltas_mhz: dr.f64_list("deltas_MHz", (0..=5).map(|k| -step * k as f64).collect())?,
        repeats: dr.uint("repeats", 3)? as usize,
    };
    dr.finish()?;
    if drag.deltas_mhz.is_empty() {
        return Err(err("drag.deltas_MHz", "needs at least one step"));
    }
    if drag.repeats == 0 {
        return Err(err("drag.repeats", "must be at least 1"));
    }

    // [semiclassical]
    let mut sm = Section::new(&root, "semiclassical")?;
    let semiclassical = SemiclassicalSettings {
        tau_ns: sm.f64("tau_ns", 150.0)?,
        gamma_d_hz: sm.f64("Gamma_d_Hz", 0.0)?,
        iz_lock: sm.f64("Iz_lock", 0.0)?,
        iz_lo: sm.f64("Iz_lo", -40.0)?,
        iz_hi: sm.f64("Iz_hi", 40.0)?,
        curve_points: sm.uint("curve_points", 801)? as usize,
        t_end_us: sm.f64("t_end_us", 1000.0)?,
        dt_us: sm.f64("dt_us", 0.1)?,
        starts: sm.f64_list("starts", vec![-15.0, -7.0, -3.0, 3.0, 7.0, 15.0])?,
    };
    sm.finish()?;
    if !(semiclassical.tau_ns > 0.0) {
        return Err(err("semiclassical.tau_ns", "must be positive"));
    }
    if !(semiclassical.iz_lo < semiclassical.iz_hi) {
        return Err(err("semiclassical.Iz_lo", "must be below Iz_hi"));
    }
    if semiclassical.curve_points < 2 {
        return Err(err("semiclassical.curve_points", "at least two points"));
    }

    Ok(RunConfig {
        model_settings: ModelSettings { n, manifold_count: count, manifold_spacing: spacing, window_fraction },
        model,
        feedback,
        probe,
        sweep: SweepSettings { parameter, values },
        scan,
        drag,
        semiclassical,
    })
}

fn parse_species(v: &Value, path: &str) -> Result<Species> {
    let Value::Table(t) = v else { return Err(err(path, "expected a table")) };
    let label = match t.get("label") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(err(format!("{path}.label"), "expected a string")),
    };
    let omega = match t.get("omega_n_MHz") {
        Some(Value::Float(x)) => *x,
        Some(Value::Integer(i)) => *i as f64,
        _ if t.contains_key("omega_n") => return Err(err(format!("{path}.omega_n"), "missing unit suffix (did you mean `omega_n_MHz`?)")),
        _ => return Err(err(format!("{path}.omega_n_MHz"), "expected a number")),
    };
    if let Some(k) = t.keys().find(|k| *k != "label" && *k != "omega_n_MHz") {
        return Err(err(format!("{path}.{k}"), "unknown key"));
    }
    Ok(Species::new(label, omega))
}

fn validate_grid(values: &[f64], path: &str) -> Result<()> {
    if values.is_empty() {
        return Err(err(path, "grid is empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err(path, "grid values must be finite"));
    }
    let inc = values.windows(2).all(|w| w[1] > w[0]);
    let dec = values.windows(2).all(|w| w[1] < w[0]);
    if !(inc || dec) {
        return Err(err(path, "grid must be strictly monotone"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c.model, EnsembleModel::nominal());
        assert_eq!(c.feedback, FeedbackConfig::default());
        assert_eq!(c.probe, ProbeSettings::default());
        assert_eq!(c.model.species.len(), 2);
        assert_eq!(c.model.manifolds.len(), 46);
    }

    #[test]
    fn single_override_changes_one_field() {
        let c = parse_config_str("[feedback]\ntau_max_ns = 150\n").unwrap();
        let d = parse_config_str("").unwrap();
        assert_eq!(c.feedback.tau_schedule, TauSchedule::Linear { min: 30.0, max: 150.0 });
        assert_eq!(FeedbackConfig { tau_schedule: d.feedback.tau_schedule, ..c.feedback.clone() }, d.feedback);
        assert_eq!(c.model, d.model);
        assert_eq!(c.probe, d.probe);
    }

    #[test]
    fn inverted_ramp_is_rejected_with_path() {
        let e = parse_config_str("[feedback]\ntau_min_ns = 120\ntau_max_ns = 90\n").unwrap_err();
        assert_eq!(e.path, "feedback.tau_min_ns");
    }

    #[test]
    fn unknown_and_unsuffixed_keys() {
        let e = parse_config_str("[feedback]\ntau_min = 30\n").unwrap_err();
        assert_eq!(e.path, "feedback.tau_min");
        assert!(e.message.contains("tau_min_ns"));
        let e = parse_config_str("[model]\nA_c = 0.5\n").unwrap_err();
        assert!(e.message.contains("A_c_MHz"));
        let e = parse_config_str("[model]\ncolour = 1\n").unwrap_err();
        assert_eq!((e.path.as_str(), e.message.as_str()), ("model.colour", "unknown key"));
        let e = parse_config_str("[extras]\nx = 1\n").unwrap_err();
        assert_eq!(e.path, "extras");
        let e = parse_config_str("[[model.species]]\nlabel = \"Ga\"\nomega_n = 10\n").unwrap_err();
        assert_eq!(e.path, "model.species[0].omega_n");
    }

    #[test]
    fn species_and_ablations_parse() {
        let c = parse_config_str(
            "[[model.species]]\nlabel = \"Ga\"\nomega_n_MHz = 10.2\n[feedback]\nablate = [\"single_species\", \"no_transverse_noise\"]\n",
        )
        .unwrap();
        assert_eq!(c.model.species, vec![Species::new("Ga", 10.2)]);
        assert!(c.feedback.ablation.single_species && c.feedback.ablation.no_transverse_noise);
        assert!(parse_config_str("[feedback]\nablate = [\"nope\"]\n").is_err());
    }

    #[test]
    fn sweep_units_follow_parameter() {
        let c = parse_config_str("[sweep]\nparameter = \"phi\"\nvalues_rad = [0.0, 3.14]\n").unwrap();
        assert_eq!(c.sweep.values, vec![0.0, 3.14]);
        let e = parse_config_str("[sweep]\nparameter = \"phi\"\nvalues_ns = [1.0]\n").unwrap_err();
        assert_eq!(e.path, "sweep.values_ns");
        let e = parse_config_str("[sweep]\nvalues_ns = [3.0, 1.0, 2.0]\n").unwrap_err();
        assert_eq!(e.path, "sweep.values_ns");
    }

    #[test]
    fn constraint_violations_name_their_key() {
        assert_eq!(parse_config_str("[noise]\nGamma_MHz = -1\n").unwrap_err().path, "noise.Gamma_MHz");
        assert_eq!(parse_config_str("[model]\nwindow_fraction = 2.0\n").unwrap_err().path, "model.window_fraction");
        assert_eq!(parse_config_str("[probe]\nfid_points = 5\n").unwrap_err().path, "probe.fid_points");
        assert_eq!(parse_config_str("[feedback]\nT_ns = \"long\"\n").unwrap_err().path, "feedback.T_ns");
        assert!(parse_config_str("[model]\nN = 49001\n").is_err());
    }
}
