use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use decolite::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// One invocation's record. Appended as a single JSON line to
/// `<out>/manifest.jsonl`; earlier lines are never rewritten.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub datasets: Vec<String>,
    pub kind: Option<String>,
    pub size: Option<usize>,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    /// Paths relative to the output directory, in write order.
    pub artifacts: Vec<String>,
    /// Wall-clock seconds per trained model, keyed by its directory.
    pub timings: BTreeMap<String, f64>,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

/// Tracks every file a command writes under one output directory.
pub struct Recorder {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn new(command: &str, root: &Path) -> Self {
        Recorder {
            root: root.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().skip(1).collect(),
                datasets: Vec::new(),
                kind: None,
                size: None,
                seeds: Vec::new(),
                config: BTreeMap::new(),
                artifacts: Vec::new(),
                timings: BTreeMap::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now(),
                finished_unix: 0.0,
            },
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers a file the caller has written.
    pub fn record(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let rel = rel.display().to_string();
        if !self.manifest.artifacts.contains(&rel) {
            self.manifest.artifacts.push(rel);
        }
    }

    /// Writes `contents` to `path` (creating parents) and records it.
    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(path, contents).map_err(|e| io_err(path, e))?;
        self.record(path);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finished_unix = now();
        std::fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))?;
        let path = self.root.join(MANIFEST_FILE);
        let line = serde_json::to_string(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

#[cfg(test)]
fn read_manifests(root: &Path) -> Result<Vec<RunManifest>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(e.to_string())))
        .collect()
}
