//! Run persistence: one directory per run under a root, each closed by an
//! immutable `manifest.json` that lists every file the run produced.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Resolved options the command ran with.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path → SHA-256 of its contents (directories hash their files).
    pub input_digests: BTreeMap<String, String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    /// Produced files or directories, relative to the run directory unless
    /// absolute.
    pub artifacts: Vec<String>,
    /// Command-specific results (throughput, summary metrics, environment).
    #[serde(default)]
    pub results: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

/// An open run; its manifest is written once by [`Run::finish`].
#[derive(Debug)]
pub struct Run {
    pub id: String,
    pub dir: PathBuf,
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    input_digests: BTreeMap<String, String>,
    started_at: DateTime<Utc>,
    artifacts: Vec<String>,
    results: serde_json::Map<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or of a directory's files in sorted relative-path order.
pub fn digest_path(path: &Path) -> Result<String, CliError> {
    let io = |e: std::io::Error| CliError::Path { path: path.into(), reason: e.to_string() };
    if !path.exists() {
        return Err(CliError::missing(path));
    }
    if path.is_file() {
        return Ok(sha256_hex(&std::fs::read(path).map_err(io)?));
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(io)? {
            let p = e.map_err(io)?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        h.update([0]);
        h.update(Sha256::digest(std::fs::read(&f).map_err(io)?));
    }
    Ok(hex::encode(h.finalize()))
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn begin(&self, command: &str, config: serde_json::Value) -> Result<Run, CliError> {
        let started_at = Utc::now();
        let short = uuid::Uuid::new_v4().simple().to_string();
        let id = format!("{command}-{}-{}", started_at.format("%Y%m%dT%H%M%S"), &short[..8]);
        let dir = self.root.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Runs(format!("{}: {e}", dir.display())))?;
        Ok(Run {
            id,
            dir,
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            started_at,
            artifacts: Vec::new(),
            results: serde_json::Map::new(),
        })
    }

    pub fn get(&self, id: &str) -> Result<RunManifest, CliError> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(CliError::Runs(format!("malformed run id {id:?}")));
        }
        let path = self.root.join(id).join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|_| CliError::Runs(format!("no run {id}")))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Runs(format!("{}: {e}", path.display())))
    }

    /// Completed runs, oldest first. Directories without a manifest (runs
    /// still in progress or aborted) are skipped.
    pub fn list(&self) -> Result<Vec<RunManifest>, CliError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let entries = std::fs::read_dir(&self.root).map_err(|e| CliError::Runs(format!("{}: {e}", self.root.display())))?;
        let mut out = Vec::new();
        for e in entries.flatten() {
            let path = e.path().join(MANIFEST_FILE);
            if let Ok(bytes) = std::fs::read(&path) {
                let m: RunManifest = serde_json::from_slice(&bytes).map_err(|e| CliError::Runs(format!("{}: {e}", path.display())))?;
                out.push(m);
            }
        }
        out.sort_by(|a, b| (a.started_at, &a.run_id).cmp(&(b.started_at, &b.run_id)));
        Ok(out)
    }
}

impl Run {
    /// Path for a new artifact inside the run directory; it is recorded in
    /// the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    /// Records an artifact written outside the run directory.
    pub fn external_artifact(&mut self, path: &Path) {
        let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        self.artifacts.push(abs.to_string_lossy().into_owned());
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = digest_path(path)?;
        self.input_digests.insert(path.to_string_lossy().into_owned(), digest);
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(value).expect("result serializes"));
    }

    pub fn finish(self) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            run_id: self.id,
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            input_digests: self.input_digests,
            started_at: self.started_at,
            finished_at: Utc::now(),
            artifacts: self.artifacts,
            results: serde_json::Value::Object(self.results),
        };
        let path = self.dir.join(MANIFEST_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| CliError::Runs(format!("{}: {e}", path.display())))?;
        f.write_all(&serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| CliError::Runs(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Machine description stored with training runs.
pub fn environment_fingerprint() -> serde_json::Value {
    serde_json::json!({
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "cpus": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        "tinydet_version": env!("CARGO_PKG_VERSION"),
        "debug_build": cfg!(debug_assertions),
    })
}
