//! Atomic file emission and the run manifest. Every output is written
//! to a dotted temp name in the target directory and renamed into
//! place, so a failed run never leaves a partial result file.

use crate::Failure;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("creating {}: {e}", dir.display())))
}

/// Runs `write` against a temp path, then renames over `path`.
pub fn atomically(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), String>,
) -> Result<(), Failure> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Failure::config(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(Failure::runtime(format!("writing {}: {e}", path.display())));
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Failure::runtime(format!("finalizing {}: {e}", path.display()))
    })
}

pub fn write_text(path: &Path, content: &str) -> Result<(), Failure> {
    atomically(path, |tmp| std::fs::write(tmp, content).map_err(|e| e.to_string()))
}

/// Reproducibility record: what ran, with what configuration, under
/// which versions, and how long it took.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub lib_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            lib_version: dapper::VERSION,
            seed,
            config,
            wall_time_s: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) -> PathBuf {
        self.outputs.push(path.display().to_string());
        path.to_path_buf()
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::runtime(format!("serializing manifest: {e}")))?;
        write_text(&dir.join("manifest.json"), &(body + "\n"))
    }
}
