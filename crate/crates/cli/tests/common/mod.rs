#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const LAT: f64 = 34.0122;
pub const LON: f64 = -117.6889;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpbo"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    out
}

/// Runs and panics with stderr on a nonzero exit.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn scenario_json(
    azimuth: f64,
    tilt: f64,
    noise: f64,
    seed: u64,
    start: &str,
    end: &str,
) -> String {
    format!(
        r#"{{
  "ground_truth": {{"orientation": {{"azimuth_deg": {azimuth}, "tilt_deg": {tilt}}}}},
  "location": {{"latitude": {LAT}, "longitude": {LON}}},
  "date_range": {{"start": "{start}", "end": "{end}"}},
  "noise_std": {noise},
  "cloud_model": {{"kind": "clear"}},
  "rng_seed": {seed}
}}"#
    )
}

/// Writes a scenario and synthesizes it into `dir/name`. Returns that
/// directory.
pub fn synth(dir: &Path, name: &str, scenario: &str) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, scenario).unwrap();
    let out = dir.join(name);
    ok(
        dir,
        &[
            "synth",
            "--scenario",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    out
}

/// Arguments pointing `infer`/`oracle` at a synthesized data directory.
pub fn data_args(data: &Path) -> Vec<String> {
    vec![
        "--generation".into(),
        data.join("generation.csv").display().to_string(),
        "--irradiance".into(),
        data.join("irradiance.csv").display().to_string(),
        "--site".into(),
        data.join("ground_truth.json").display().to_string(),
    ]
}

pub fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV written by the tool, split on commas.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

pub fn best_point(best: &serde_json::Value) -> (f64, f64) {
    (
        best["best"]["azimuth_deg"].as_f64().unwrap(),
        best["best"]["tilt_deg"].as_f64().unwrap(),
    )
}
