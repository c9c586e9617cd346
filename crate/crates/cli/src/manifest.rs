use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use walkfield::{Error, Result, RunConfig};

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: &'a std::collections::BTreeMap<String, String>,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
    wall_time_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks hashed inputs and written outputs for one command run.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    pub seed: Option<u64>,
}

impl Run {
    pub fn new(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
        })
    }

    pub fn input_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Read a file and record its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
        self.input_bytes(&path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.out.join(name), bytes)?;
        self.outputs.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(self, cfg: &RunConfig) -> Result<()> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: cfg.entries(),
            inputs: &self.inputs,
            outputs: &self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(self.out.join("manifest.json"), bytes)?;
        Ok(())
    }
}
