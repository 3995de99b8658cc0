//! Per-directory run manifest: versions, seeds, resolved settings, hashes of
//! every input and output, and wall-clock timings.
//!
//! Each command owns one entry under `runs`, so several commands can share an
//! output directory. Everything except `timings_ms` is a pure function of the
//! inputs and settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub runs: BTreeMap<String, RunRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seeds: BTreeMap<String, u64>,
    pub config: BTreeMap<String, String>,
    /// File name to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl Manifest {
    fn empty() -> Self {
        Self {
            tool: "eqcov".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            runs: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::empty());
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The manifest with every timing removed, for determinism checks.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        for run in m.runs.values_mut() {
            run.timings_ms.clear();
        }
        m
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_key(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// Bookkeeping for one command invocation.
#[derive(Debug)]
pub struct Run {
    command: String,
    out_dir: PathBuf,
    record: RunRecord,
    started: Instant,
}

impl Run {
    pub fn start(command: &str, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            command: command.into(),
            out_dir: out_dir.into(),
            record: RunRecord::default(),
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.record.seeds.insert(name.into(), seed);
    }

    pub fn config(&mut self, resolved: BTreeMap<String, String>) {
        self.record.config.extend(resolved);
    }

    /// Reads an input file and records its digest under its file name.
    pub fn input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|source| CliError::Input {
            path: path.into(),
            source,
        })?;
        self.record
            .inputs
            .insert(file_key(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn input_hashes(&self) -> BTreeMap<String, String> {
        self.record.inputs.clone()
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes)?;
        self.record.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn time(&mut self, label: &str, since: Instant) {
        self.record
            .timings_ms
            .insert(label.into(), since.elapsed().as_secs_f64() * 1e3);
    }

    /// Stores the record under this command's name and rewrites the manifest.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.record
            .timings_ms
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let mut manifest = Manifest::load(&self.out_dir)?;
        manifest.version = env!("CARGO_PKG_VERSION").into();
        manifest.runs.insert(self.command, self.record);
        let path = self.out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
