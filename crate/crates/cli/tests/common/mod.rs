#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

pub fn tinydet(runs: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tinydet"));
    c.env_remove("TINYDET_MODEL").env_remove("TINYDET_CONFIG").env("TINYDET_RUNS", runs);
    c
}

fn describe(out: &Output) -> String {
    format!("status {:?}\nstdout {}\nstderr {}", out.status.code(), String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

/// Runs to completion, asserts success and parses the stdout summary.
pub fn run_ok(runs: &Path, args: &[&str]) -> Value {
    let out = tinydet(runs).args(args).output().expect("spawn tinydet");
    assert!(out.status.success(), "{:?} failed: {}", args, describe(&out));
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", describe(&out)))
}

/// Runs expecting failure; returns the exit code and the JSON error line.
pub fn run_err(runs: &Path, args: &[&str]) -> (i32, Value) {
    let out = tinydet(runs).args(args).output().expect("spawn tinydet");
    assert!(!out.status.success(), "{:?} unexpectedly succeeded: {}", args, describe(&out));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v = serde_json::from_str(line).unwrap_or_else(|e| panic!("last stderr line is not JSON ({e}): {}", describe(&out)));
    (out.status.code().expect("exit code"), v)
}

/// A fresh directory under the cargo test tmpdir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("tinydet-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub struct Fixture {
    pub root: PathBuf,
    /// Synthetic corpus, one directory per source.
    pub data: PathBuf,
    pub runs: PathBuf,
    pub model: PathBuf,
    pub train_run: String,
}

/// Four 64 px scenes and a briefly trained checkpoint, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = scratch("fixture");
        let data = root.join("data");
        let runs = root.join("runs");
        let d = data.to_str().unwrap();
        run_ok(
            &runs,
            &[
                "synth",
                "--out",
                d,
                "--scenes",
                "4",
                "--seed",
                "11",
                "--width",
                "64",
                "--height",
                "64",
                "--duration",
                "0.4",
                "--n-sperm",
                "3",
                "--n-impurity",
                "1",
            ],
        );
        let v = run_ok(&runs, &["train", "--data", d, "--size", "64", "--epochs1", "2", "--epochs2", "25", "--seed", "2", "--fps-frames", "1"]);
        let model = PathBuf::from(v["model"].as_str().unwrap());
        let train_run = v["run_id"].as_str().unwrap().to_string();
        Fixture { root, data, runs, model, train_run }
    })
}
