use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nucfeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nucfeed")).args(args).output().expect("spawn nucfeed")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nucfeed-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn number(v: &serde_json::Value) -> f64 {
    v.as_str().unwrap().parse().unwrap()
}

#[test]
fn simulate_writes_every_output_and_a_manifest() {
    let dir = scratch("simulate");
    let out = nucfeed(&["simulate", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fid.csv", "p.csv", "fit.json", "diagnostics.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let fid = std::fs::read_to_string(dir.join("fid.csv")).unwrap();
    assert!(fid.starts_with("# columns: time_ns,Sz\n"));
    assert_eq!(fid.lines().count(), 1 + 1201);
    let p = std::fs::read_to_string(dir.join("p.csv")).unwrap();
    assert!(p.starts_with("# columns: freq_MHz,density_per_MHz\n"));

    let fit = json(&dir.join("fit.json"));
    let t2 = number(&fit["T2_star_ns"]);
    assert!((95.0..=160.0).contains(&t2), "T2* {t2}");

    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"fid.csv") && outputs.contains(&"manifest.json"));
    assert!(manifest["stage_timings_s"]["evolve"].as_f64().is_some());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn analyze_recovers_a_gaussian_envelope() {
    let dir = scratch("analyze");
    let input = dir.join("fid.csv");
    let mut text = String::from("# columns: time_ns,Sz\n");
    for k in 0..=600 {
        let t = k as f64;
        let v = 0.5 * (-(t / 120.0f64).powi(2)).exp() * (2.0 * std::f64::consts::PI * 60.0 * t * 1e-3).cos();
        text.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(&input, text).unwrap();
    let out = nucfeed(&["analyze", input.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(&dir.join("fit.json"));
    assert!((number(&fit["alpha"]) - 2.0).abs() < 0.05);
    assert!((number(&fit["T2_star_ns"]) - 120.0).abs() < 1.0);
    assert!(dir.join("p.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn selftest_passes() {
    let dir = scratch("selftest");
    let out = nucfeed(&["selftest", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(dir.join("selftest.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn semiclassical_outputs() {
    let dir = scratch("semiclassical");
    let out = nucfeed(&["semiclassical", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fixed = std::fs::read_to_string(dir.join("fixed_points.csv")).unwrap();
    assert!(fixed.lines().skip(1).any(|l| l.ends_with(",1")));
    assert!(dir.join("rate_curve.csv").exists() && dir.join("trajectories.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn configuration_errors_exit_with_two_and_name_the_key() {
    let dir = scratch("config");
    let cases = [
        ("[feedback]\ntau_max = 98\n", "feedback.tau_max"),
        ("[feedback]\ntau_min_ns = 120\ntau_max_ns = 60\n", "feedback"),
        ("[model]\nN = 49001\n", "N"),
        ("[nonsense]\nx = 1\n", "nonsense"),
    ];
    for (k, (text, needle)) in cases.iter().enumerate() {
        let path = dir.join(format!("bad{k}.toml"));
        std::fs::write(&path, text).unwrap();
        let out = nucfeed(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{text}: {err}");
    }
    assert!(!dir.join("manifest.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn flag_errors_are_rejected() {
    assert_eq!(nucfeed(&["simulate", "--ablate", "no_such_flag", "--out", "/nonexistent"]).status.code(), Some(2));
    assert_eq!(nucfeed(&["simulate", "--seedless=3"]).status.code(), Some(2));
    assert_eq!(nucfeed(&["simulate", "--threads", "0"]).status.code(), Some(2));
}
