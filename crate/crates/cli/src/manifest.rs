//! Run manifests: a JSON record of exactly what a command ran with.
//!
//! A manifest is written in `running` state before the command does any work
//! and finalized afterwards with output digests and wall-clock timings.
//! Identical resolved configs and input digests reproduce identical output
//! digests; the timing fields are the only nondeterministic part.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    /// Fully resolved configuration, sorted by key.
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// FNV-1a digests of input files.
    pub inputs: BTreeMap<String, String>,
    /// FNV-1a digests of output files, filled at finalize time.
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub elapsed_ms: Option<u128>,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    t0: Instant,
}

fn digest_bytes(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

/// Digest every regular file under a directory, keyed by relative name.
fn digest_tree(root: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
    let mut names: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    names.sort();
    for p in names {
        if p.is_file() {
            out.insert(p.display().to_string(), digest_file(&p)?);
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn start(command: &str, manifest_path: PathBuf) -> Self {
        RunManifest {
            command: command.to_string(),
            status: "running".into(),
            config: BTreeMap::new(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            elapsed_ms: None,
            path: manifest_path,
            t0: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        if path.is_dir() {
            digest_tree(path, &mut self.inputs)
        } else {
            self.inputs.insert(path.display().to_string(), digest_file(path)?);
            Ok(())
        }
    }

    /// Persist the manifest in its current (running) state.
    pub fn write_running(&self) -> std::io::Result<()> {
        self.write()
    }

    /// Record outputs and timing, mark done, and persist.
    pub fn finalize(&mut self, outputs: &[PathBuf]) -> std::io::Result<()> {
        for path in outputs {
            if path.is_dir() {
                digest_tree(path, &mut self.outputs)?;
            } else if path.is_file() {
                self.outputs.insert(path.display().to_string(), digest_file(path)?);
            }
        }
        self.status = "done".into();
        self.elapsed_ms = Some(self.t0.elapsed().as_millis());
        self.write()
    }

    fn write(&self) -> std::io::Result<()> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&self.path, json)
    }
}
