//! Run manifests. A manifest lists, per stage, the hash of the stage inputs
//! and every output file with its hash, relative to the output directory.
//! Wall-clock durations go to a sidecar so the manifest itself is
//! reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::Stage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const STAGE_INDEX_FILE: &str = "stage_index.json";
pub const SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl OutputFile {
    pub fn describe(out: &Path, rel: &Path) -> Result<Self> {
        let full = out.join(rel);
        let meta = fs::metadata(&full).with_context(|| format!("stat {}", full.display()))?;
        Ok(OutputFile {
            path: rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/"),
            sha256: file_sha256(&full)?,
            bytes: meta.len(),
        })
    }

    /// True when the file exists with the recorded hash.
    pub fn verify(&self, out: &Path) -> bool {
        file_sha256(&out.join(&self.path)).is_ok_and(|h| h == self.sha256)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub input_hash: String,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_corpus_hash: String,
    pub requested: Vec<Stage>,
    pub stages: Vec<StageRecord>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let p = out.join(MANIFEST_FILE);
        write_json(&p, self)?;
        Ok(p)
    }

    pub fn read(out: &Path) -> Result<Self> {
        let p = out.join(MANIFEST_FILE);
        let raw = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_slice(&raw)?)
    }

    /// Outputs whose file is missing or changed.
    pub fn stale_outputs(&self, out: &Path) -> Vec<String> {
        self.stages
            .iter()
            .flat_map(|s| &s.outputs)
            .filter(|o| !o.verify(out))
            .map(|o| o.path.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub millis: u128,
    /// Inputs matched an earlier run and its outputs were intact.
    pub reused: bool,
}

/// Latest record per stage across runs in one output directory.
pub type StageIndex = BTreeMap<Stage, StageRecord>;

pub fn read_index(out: &Path) -> StageIndex {
    fs::read(out.join(STAGE_INDEX_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
