mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nucfeed_core::dicke::{sample_manifolds, EnsembleModel};
use nucfeed_core::engine::{drag_lockpoint, run_sequence, FeedbackConfig, TauSchedule};
use nucfeed_core::probe::{
    extract_p, fft_to_distribution, find_modes, fit_stretched_exponential, fwhm, lddp_entropy, macrostate_count, FidTrace,
    SpectralDistribution,
};
use nucfeed_core::scenarios::{bimodal_scan, multistability_scan, observe, sweep, ScanPoint, SweepSpec};
use nucfeed_core::selftest::run_selftest;
use nucfeed_core::semiclassical::{
    directional_rates, find_stable_points, integrate_trajectory, rate, SemiclassicalParams,
};
use nucfeed_core::Error;

use config::{parse_config_file, parse_config_str, ConfigError, RunConfig};
use output::{manifest, num, read_two_columns, Csv, Outputs, Timings};

#[derive(Parser)]
#[command(name = "nucfeed", version, about = "Simulate electron-mediated feedback cooling of a nuclear spin ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated ablation flags added to the configured ones.
    #[arg(long, global = true, value_delimiter = ',')]
    ablate: Vec<String>,
    /// No randomness is used anywhere; accepted for explicitness.
    #[arg(long, global = true)]
    seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One feedback sequence: FID, distribution, fit and entropy.
    Simulate,
    /// Sweep one parameter over the configured grid.
    Sweep,
    /// Sense-phase scan at fixed sensing time (bimodality).
    ScanPhi,
    /// Fixed-sensing-time scan (latticed multistability).
    ScanTau,
    /// Drag the lockpoint through the configured detuning steps.
    Drag,
    /// Mean-field rate curve, fixed points and trajectories.
    Semiclassical,
    /// Fit an external FID CSV (`time_ns,Sz`).
    Analyze {
        input: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
    Selftest,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(m) => Failure::Numerical(m),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Selftest) => ExitCode::from(1),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config_file(p)?,
        None => parse_config_str("")?,
    };
    for flag in &cli.ablate {
        cfg.feedback.ablation.set(flag.trim()).map_err(|e| Failure::Config(format!("--ablate: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Io(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    let mut out = Outputs::new(&cli.out);
    let mut timings = Timings::start();
    let name = match &cli.command {
        Command::Simulate => {
            simulate(&cfg, &mut out, &mut timings)?;
            "simulate"
        }
        Command::Sweep => {
            run_sweep(&cfg, &mut out, &mut timings)?;
            "sweep"
        }
        Command::ScanPhi => {
            scan_phi(&cfg, &mut out, &mut timings)?;
            "scan-phi"
        }
        Command::ScanTau => {
            scan_tau(&cfg, &mut out, &mut timings)?;
            "scan-tau"
        }
        Command::Drag => {
            drag(&cfg, &mut out, &mut timings)?;
            "drag"
        }
        Command::Semiclassical => {
            semiclassical(&cfg, &mut out, &mut timings)?;
            "semiclassical"
        }
        Command::Analyze { input } => {
            analyze(&cfg, input, &mut out, &mut timings)?;
            "analyze"
        }
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            out.add_json("selftest.json", &checks);
            timings.stage("selftest");
            let ok = checks.iter().all(|c| c.passed);
            write_all(&out, "selftest", &cfg, &timings)?;
            return if ok { Ok(()) } else { Err(Failure::Selftest) };
        }
    };
    write_all(&out, name, &cfg, &timings)
}

fn write_all(out: &Outputs, name: &str, cfg: &RunConfig, timings: &Timings) -> Result<(), Failure> {
    let m = manifest(name, cfg, out, timings);
    out.write()?;
    let mut text = serde_json::to_string_pretty(&m).expect("serializable manifest");
    text.push('\n');
    std::fs::write(out.dir().join("manifest.json"), text)?;
    Ok(())
}

fn fid_csv(fid: &FidTrace) -> String {
    let mut c = Csv::new(&["time_ns", "Sz"]);
    for (t, v) in fid.times.iter().zip(&fid.values) {
        c.numbers(&[*t, *v]);
    }
    c.into_string()
}

fn p_csv(p: &SpectralDistribution) -> String {
    let mut c = Csv::new(&["freq_MHz", "density_per_MHz"]);
    for (f, d) in p.freqs.iter().zip(&p.dens) {
        c.numbers(&[*f, *d]);
    }
    c.into_string()
}

/// Fit and summary record; values are pre-formatted for determinism.
fn fit_record(fit: &nucfeed_core::probe::FitResult, extra: &[(&str, f64)]) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    m.insert("T2_star_ns".into(), num(fit.t2_star).into());
    m.insert("alpha".into(), num(fit.alpha).into());
    m.insert("amplitude".into(), num(fit.amplitude).into());
    m.insert("residual_norm".into(), num(fit.residual_norm).into());
    m.insert("iterations".into(), fit.iterations.into());
    m.insert("converged".into(), fit.converged.into());
    for (k, v) in extra {
        m.insert((*k).into(), num(*v).into());
    }
    serde_json::Value::Object(m)
}

fn simulate(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let res = run_sequence(&cfg.model, &cfg.feedback)?;
    t.stage("evolve");
    let p = extract_p(&res.runs, &cfg.model, &cfg.probe.grid, cfg.feedback.lockpoint(&cfg.model))?;
    let obs = observe(p, &cfg.probe)?;
    t.stage("analyze");
    out.add("fid.csv", fid_csv(&obs.fid));
    out.add("p.csv", p_csv(&obs.distribution));
    let mut rec = fit_record(
        &obs.fit,
        &[
            ("entropy", obs.entropy),
            ("fwhm_MHz", obs.fwhm),
            ("macrostates", macrostate_count(&obs.distribution, cfg.model.a_c)),
        ],
    );
    rec["multimodal"] = obs.multimodal.into();
    out.add_json("fit.json", &rec);
    let mut diag = Csv::new(&["species", "I", "cycles", "trace_leakage", "clamped_blocks", "min_transverse_factor"]);
    for r in &res.runs {
        for d in &r.diagnostics {
            diag.row(&[
                r.species.label.clone(),
                d.i.to_string(),
                d.cycles.to_string(),
                num(d.trace_leakage),
                d.clamped_blocks.to_string(),
                num(d.min_transverse_factor),
            ]);
        }
    }
    out.add("diagnostics.csv", diag.into_string());
    Ok(())
}

fn run_sweep(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let spec = SweepSpec { parameter: cfg.sweep.parameter, values: cfg.sweep.values.clone(), base: cfg.feedback.clone() };
    let rows = sweep(&cfg.model, &spec, &cfg.probe)?;
    t.stage("sweep");
    let mut c = Csv::new(&[cfg.sweep.parameter.name(), "T2_star_ns", "alpha", "entropy", "fwhm_MHz", "error"]);
    for r in &rows {
        let mut cells: Vec<String> = [r.value, r.t2_star, r.alpha, r.entropy, r.fwhm].iter().map(|v| num(*v)).collect();
        cells.push(r.error.clone().unwrap_or_default().replace(',', ";"));
        c.row(&cells);
    }
    out.add("sweep.csv", c.into_string());
    Ok(())
}

fn engineering_model(cfg: &RunConfig) -> Result<EnsembleModel, Failure> {
    let s = &cfg.model_settings;
    let mut m = cfg.model.clone();
    m.manifolds = sample_manifolds(s.n, s.manifold_count, s.manifold_spacing, cfg.scan.window_fraction)?;
    Ok(m)
}

fn map_csv(x_name: &str, points: &[ScanPoint]) -> String {
    let mut c = Csv::new(&[x_name, "freq_MHz", "density_per_MHz"]);
    for pt in points {
        for (f, d) in pt.distribution.freqs.iter().zip(&pt.distribution.dens) {
            c.numbers(&[pt.value, *f, *d]);
        }
    }
    c.into_string()
}

fn scan_phi(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let model = engineering_model(cfg)?;
    let fc = FeedbackConfig { tau_schedule: TauSchedule::Fixed(cfg.scan.phi_tau_ns), ..cfg.feedback.clone() };
    let (rows, pts) = bimodal_scan(&model, &cfg.scan.phi_values, &fc, &cfg.probe)?;
    t.stage("scan");
    let mut c = Csv::new(&["phi_rad", "mode_count", "splitting_MHz", "weight_ratio", "entropy"]);
    for r in &rows {
        c.row(&[num(r.phi), r.mode_count.to_string(), num(r.splitting), num(r.weight_ratio), num(r.entropy)]);
    }
    out.add("bimodal.csv", c.into_string());
    out.add("phi_map.csv", map_csv("phi_rad", &pts));
    Ok(())
}

fn scan_tau(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let model = engineering_model(cfg)?;
    let (rows, pts) = multistability_scan(&model, &cfg.scan.tau_values, &cfg.feedback, &cfg.probe)?;
    t.stage("scan");
    let mut c = Csv::new(&["tau_ns", "mode_count", "spacing_MHz", "expected_spacing_MHz", "mode_widths_MHz", "entropy"]);
    for r in &rows {
        let widths: Vec<String> = r.widths.iter().map(|w| num(*w)).collect();
        c.row(&[
            num(r.tau),
            r.mode_count.to_string(),
            num(r.spacing),
            num(r.expected_spacing),
            widths.join(";"),
            num(r.entropy),
        ]);
    }
    out.add("multistability.csv", c.into_string());
    out.add("tau_map.csv", map_csv("tau_ns", &pts));
    Ok(())
}

fn drag(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let locks: Vec<f64> = cfg.drag.deltas_mhz.iter().map(|d| -d / cfg.model.a_c).collect();
    let lo = locks.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = locks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Only manifolds whose window hosts every lockpoint can follow the drag.
    let model = cfg.model.restrict_to_lockpoints(lo, hi, cfg.feedback.lock_margin)?;
    let fc = FeedbackConfig { drag: cfg.drag.deltas_mhz.iter().map(|d| (*d, cfg.drag.repeats)).collect(), ..cfg.feedback.clone() };
    let steps = drag_lockpoint(&model, &fc, &cfg.probe.grid)?;
    t.stage("drag");
    let mut c = Csv::new(&["step", "delta_MHz", "lockpoint", "mean_Iz", "mode_centre_MHz", "fwhm_MHz", "entropy"]);
    let mut map = Csv::new(&["step", "freq_MHz", "density_per_MHz"]);
    for (k, s) in steps.iter().enumerate() {
        c.row(&[
            k.to_string(),
            num(s.delta),
            num(s.lockpoint),
            num(s.mean_iz),
            num(find_modes(&s.distribution).iter().max_by(|a, b| a.height.total_cmp(&b.height)).map_or(f64::NAN, |m| m.centre)),
            num(fwhm(&s.distribution).width),
            num(lddp_entropy(&s.distribution, cfg.probe.lddp)),
        ]);
        for (f, d) in s.distribution.freqs.iter().zip(&s.distribution.dens) {
            map.row(&[k.to_string(), num(*f), num(*d)]);
        }
    }
    out.add("drag.csv", c.into_string());
    out.add("drag_map.csv", map.into_string());
    Ok(())
}

fn semiclassical(cfg: &RunConfig, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let s = &cfg.semiclassical;
    let mut p = SemiclassicalParams::from_couplings(cfg.model.a_c, cfg.model.a_nc, s.tau_ns, s.iz_lock)?;
    p.gamma_d = s.gamma_d_hz;
    p.validate()?;
    let mut curve = Csv::new(&["Iz", "rate_per_us", "W_plus_per_us", "W_minus_per_us"]);
    for k in 0..s.curve_points {
        let iz = s.iz_lo + (s.iz_hi - s.iz_lo) * k as f64 / (s.curve_points - 1) as f64;
        let (wp, wm) = directional_rates(iz - s.iz_lock, &p);
        curve.numbers(&[iz, rate(iz, &p), wp, wm]);
    }
    out.add("rate_curve.csv", curve.into_string());
    let mut fixed = Csv::new(&["Iz", "stable"]);
    for f in find_stable_points(&p, s.iz_lo, s.iz_hi)? {
        fixed.row(&[num(f.iz), (f.stable as u8).to_string()]);
    }
    out.add("fixed_points.csv", fixed.into_string());
    let dt = s.dt_us.min(0.01 * p.cycle_time());
    let mut traj = Csv::new(&["Iz0", "time_us", "Iz"]);
    for &iz0 in &s.starts {
        let tr = integrate_trajectory(iz0, &p, s.t_end_us, dt)?;
        let stride = (tr.times.len() / 500).max(1);
        for (k, (tm, iz)) in tr.times.iter().zip(&tr.iz).enumerate() {
            if k % stride == 0 || k + 1 == tr.times.len() {
                traj.numbers(&[iz0, *tm, *iz]);
            }
        }
    }
    out.add("trajectories.csv", traj.into_string());
    t.stage("semiclassical");
    Ok(())
}

fn analyze(cfg: &RunConfig, input: &Path, out: &mut Outputs, t: &mut Timings) -> Result<(), Failure> {
    let (times, values) = read_two_columns(input).map_err(Failure::Config)?;
    let fid = FidTrace { times, values, omega_serr: cfg.probe.omega_serr };
    let fit = fit_stretched_exponential(&fid)?;
    t.stage("fit");
    let mut extra = Vec::new();
    match fft_to_distribution(&fid) {
        Ok(p) => {
            extra.push(("fwhm_MHz", fwhm(&p).width));
            out.add("p.csv", p_csv(&p));
        }
        Err(e) => eprintln!("note: no Fourier distribution: {e}"),
    }
    let mut rec = fit_record(&fit, &extra);
    rec["input"] = input.display().to_string().into();
    rec["samples"] = fid.times.len().into();
    out.add_json("fit.json", &rec);
    t.stage("fourier");
    Ok(())
}
