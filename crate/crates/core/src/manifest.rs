//! Per-run record of what went in and what came out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::sub_seed;

/// Component tags whose derived seeds are worth recording.
pub const SEED_TAGS: &[&str] = &[
    "walk",
    "init/gcn",
    "init/codec",
    "stage1/shuffle",
    "stage2/shuffle",
    "stage2/snr",
    "stage2/noise",
    "ablation",
    "world/structure",
    "world/words",
    "world/visual",
    "world/train",
    "world/test",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    /// Starts a manifest and digests the inputs, which must exist.
    pub fn begin(command: &str, config: BTreeMap<String, String>, master_seed: u64, inputs: &[PathBuf]) -> Result<Self> {
        let mut seeds: BTreeMap<String, u64> = SEED_TAGS.iter().map(|t| (t.to_string(), sub_seed(master_seed, t))).collect();
        seeds.insert("master".into(), master_seed);
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seeds,
            inputs: digests(inputs)?,
            outputs: Vec::new(),
            started: unix_now(),
            finished: 0,
        })
    }

    /// Digests the outputs, stamps the end time and writes the manifest.
    pub fn finish(mut self, outputs: &[PathBuf], path: &Path) -> Result<Self> {
        self.outputs = digests(outputs)?;
        self.finished = unix_now();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
