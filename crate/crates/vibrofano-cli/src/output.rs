//! CSV artifacts and the JSON manifest that lists them with their hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use vibrofano::dynamics::RunDiagnostics;

use crate::settings::Effective;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Shortest decimal that round-trips; keeps CSVs byte-identical between runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct RunEntry {
    case: String,
    diagnostics: RunDiagnostics,
    edge_guard_ok: bool,
    energy_ok: bool,
}

pub struct Artifacts {
    root: PathBuf,
    files: Vec<FileEntry>,
    runs: Vec<RunEntry>,
    pub summary: Map<String, Value>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Artifacts {
            root: root.to_path_buf(),
            files: Vec::new(),
            runs: Vec::new(),
            summary: Map::new(),
        })
    }

    /// Write a CSV with a one-line header. `name` may contain subdirectories.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    /// `summary[group][key] = value`.
    pub fn put_in(&mut self, group: &str, key: &str, value: impl Into<Value>) {
        let entry = self.summary.entry(group.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(m) = entry {
            m.insert(key.to_string(), value.into());
        }
    }

    /// Record a run; guard or energy problems are reported on stderr and in the manifest.
    pub fn run(&mut self, case: &str, d: RunDiagnostics) {
        let energy_ok = d.max_energy_drift < 1e-6;
        if !d.edge_guard_ok() {
            log::warn!("{case}: density reached the chain ends ({:.2e}); run flagged invalid", d.max_edge_density);
        }
        if !energy_ok {
            log::warn!("{case}: energy drifted by {:.2e} J; consider a smaller dt", d.max_energy_drift);
        }
        self.runs.push(RunEntry {
            case: case.to_string(),
            diagnostics: d,
            edge_guard_ok: d.edge_guard_ok(),
            energy_ok,
        });
    }

    /// Write `manifest.json` last; it is not listed in itself.
    pub fn finish(self, scenario: &str, eff: &Effective) -> Result<PathBuf, CliError> {
        let config_toml = eff.to_toml();
        let manifest = serde_json::json!({
            "scenario": scenario,
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": sha256_hex(config_toml.as_bytes()),
            "config": serde_json::to_value(eff).map_err(|e| CliError::Io(e.to_string()))?,
            "files": self.files,
            "runs": self.runs,
            "valid": self.runs.iter().all(|r| r.edge_guard_ok && r.energy_ok),
            "summary": self.summary,
        });
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
