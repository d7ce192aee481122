//! Append-only run manifests.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::exit::{io_error, CliResult};

pub const MANIFEST_LOG: &str = "manifests.jsonl";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    /// SHA-256 over the config and every input file, in order.
    pub input_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_s: f64,
    pub exit_code: i32,
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.into(),
            started: Instant::now(),
            config: Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    /// Appends one line to `<dir>/manifests.jsonl`.
    pub fn finish(self, dir: &Path, exit_code: i32) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            input_hash: hash_inputs(&self.config, &self.inputs)?,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            exit_code,
        };
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(MANIFEST_LOG);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_error(&path, e))?;
        let line = serde_json::to_string(&manifest).expect("manifest serializes");
        writeln!(f, "{line}").map_err(|e| io_error(&path, e))
    }
}

fn hash_inputs(config: &Value, inputs: &[PathBuf]) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(config.to_string().as_bytes());
    for p in inputs {
        hash_path(&mut h, p)?;
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Files by content; directories by sorted entry names and contents.
fn hash_path(h: &mut Sha256, p: &Path) -> CliResult<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| io_error(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|e| e.file_name().is_some_and(|n| n != MANIFEST_LOG))
            .collect();
        entries.sort();
        for e in entries {
            h.update(e.file_name().unwrap_or_default().to_string_lossy().as_bytes());
            hash_path(h, &e)?;
        }
    } else if p.exists() {
        h.update(std::fs::read(p).map_err(|e| io_error(p, e))?);
    }
    Ok(())
}
