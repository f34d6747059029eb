//! CSV/JSON writers and the run manifest. All numbers use `{:.8e}` (nine
//! significant digits, locale independent).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.8e}")
    }
}

/// CSV text with a `# columns:` header line.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        Self { text: format!("# columns: {}\n", columns.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn numbers(&mut self, values: &[f64]) {
        self.row(&values.iter().map(|v| num(*v)).collect::<Vec<_>>());
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Reads a two-column numeric CSV, skipping `#` comment lines.
pub fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|_| format!("{}:{}: `{s}` is not a number", path.display(), line_no + 1));
        match cells.as_slice() {
            [x, y] => {
                a.push(parse(x)?);
                b.push(parse(y)?);
            }
            _ => return Err(format!("{}:{}: expected two columns", path.display(), line_no + 1)),
        }
    }
    Ok((a, b))
}

/// Collects result files in memory; everything is written at the end.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, contents: String) {
        debug_assert!(self.files.iter().all(|(n, _)| n != name), "duplicate output {name}");
        self.files.push((name.to_string(), contents));
    }

    pub fn add_json(&mut self, name: &str, value: &impl Serialize) {
        let mut s = serde_json::to_string_pretty(value).expect("serializable output");
        s.push('\n');
        self.add(name, s);
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn write(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        for (name, contents) in &self.files {
            std::fs::write(self.dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// Named stage timings measured from a common start.
pub struct Timings {
    start: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn start() -> Self {
        let now = Instant::now();
        Self { start: now, last: now, stages: Vec::new() }
    }

    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push((name.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    pub fn total(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

#[derive(Serialize)]
pub struct Manifest<'a, P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub config_digest: String,
    pub parameters: &'a P,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub stage_timings_s: serde_json::Map<String, serde_json::Value>,
}

/// SHA-256 of the canonical JSON serialization of the parsed configuration.
pub fn digest(value: &impl Serialize) -> String {
    let canonical = serde_json::to_vec(value).expect("serializable config");
    hex::encode(Sha256::digest(&canonical))
}

pub fn manifest<'a, P: Serialize>(subcommand: &'a str, params: &'a P, outputs: &Outputs, timings: &Timings) -> Manifest<'a, P> {
    let mut names = outputs.names();
    names.push("manifest.json".into());
    Manifest {
        tool: "nucfeed",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config_digest: digest(params),
        parameters: params,
        outputs: names,
        wall_clock_s: timings.total(),
        stage_timings_s: timings.stages.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(0.5), "5.00000000e-1");
        assert_eq!(num(-123.456789012), "-1.23456789e2");
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn csv_header_and_rows() {
        let mut c = Csv::new(&["time_ns", "Sz"]);
        c.numbers(&[0.0, 0.5]);
        assert_eq!(c.into_string(), "# columns: time_ns,Sz\n0.00000000e0,5.00000000e-1\n");
    }

    #[test]
    fn digest_is_stable() {
        let a = digest(&serde_json::json!({"x": 1.0, "y": [1, 2]}));
        let b = digest(&serde_json::json!({"x": 1.0, "y": [1, 2]}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
