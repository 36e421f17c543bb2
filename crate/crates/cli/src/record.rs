use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// One record per invocation, written next to the primary output.
#[derive(Debug, Serialize)]
pub struct PipelineRunRecord {
    pub subcommand: String,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub wall_time_secs: f64,
    pub version: String,
    pub status: String,
    pub exit_code: i32,
}

/// sha256 over the arguments after the program name, NUL separated.
pub fn config_hash(args: &[String]) -> String {
    let mut h = Sha256::new();
    for a in args.iter().skip(1) {
        h.update(a.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

pub const DEFAULT_RECORD: &str = "finadapt-run.json";

pub struct RunTracker {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    started: Instant,
}

impl RunTracker {
    pub fn new(subcommand: impl Into<String>) -> Self {
        Self {
            subcommand: subcommand.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish(self, args: &[String], exit_code: i32, status: &str) -> PipelineRunRecord {
        PipelineRunRecord {
            subcommand: self.subcommand,
            config_hash: config_hash(args),
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.seed,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: status.to_string(),
            exit_code,
        }
    }
}

/// `--run-record` wins; otherwise `<first output>.run.json`, else the working directory.
pub fn record_path(explicit: Option<&Path>, outputs: &[PathBuf]) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match outputs.first() {
        Some(o) => {
            let mut name = o.file_name().unwrap_or_default().to_os_string();
            name.push(".run.json");
            o.with_file_name(name)
        }
        None => PathBuf::from(DEFAULT_RECORD),
    }
}
