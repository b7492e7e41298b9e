//! Artifact directories and their manifests.
//!
//! Every file written through [`ArtifactDir`] is hashed, and the manifest
//! lists those hashes next to the config hash and seed set. Nothing in the
//! manifest depends on wall-clock time, absolute paths or worker counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Seeds};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "cotforge-manifest";

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StageEntry {
    pub name: String,
    pub version: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeedSet {
    pub corpus: u64,
    pub sft: u64,
    pub cot: u64,
    pub grpo: u64,
}

impl From<&Seeds> for SeedSet {
    fn from(s: &Seeds) -> Self {
        Self {
            corpus: s.corpus,
            sft: s.sft,
            cot: s.cot,
            grpo: s.grpo,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Manifest {
    pub format: &'static str,
    pub version: u32,
    pub command: String,
    pub config_hash: String,
    pub seeds: SeedSet,
    pub grammar_hash: String,
    pub stages: Vec<StageEntry>,
    pub failed_stage: Option<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
    pub artifacts: BTreeMap<String, String>,
}

/// An output directory that records the sha256 of everything written to it.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ArtifactDir {
    pub fn create(root: &Path, command: &str, cfg: &ExperimentConfig, grammar_hash: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        let mut dir = Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                format: MANIFEST_FORMAT,
                version: 1,
                command: command.into(),
                config_hash: cfg.hash(),
                seeds: SeedSet::from(&cfg.seeds),
                grammar_hash: grammar_hash.into(),
                stages: Vec::new(),
                failed_stage: None,
                notes: BTreeMap::new(),
                artifacts: BTreeMap::new(),
            },
        };
        dir.write("config.conf", cfg.canonical().as_bytes())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `bytes` to `rel` (creating parent directories) and records its
    /// hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.manifest.artifacts.insert(rel.into(), sha256_hex(bytes));
        Ok(path)
    }

    /// Records a file that something else already wrote under the root.
    pub fn register(&mut self, rel: &str) -> std::io::Result<PathBuf> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path)?;
        self.manifest.artifacts.insert(rel.into(), sha256_hex(&bytes));
        Ok(path)
    }

    pub fn stage_done(&mut self, name: &str) {
        self.manifest.stages.push(StageEntry {
            name: name.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "ok".into(),
        });
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("notes are plain data");
        self.manifest.notes.insert(key.into(), v);
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Writes the manifest and returns the sha256 of its bytes.
    pub fn finish(&self) -> std::io::Result<String> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        std::fs::write(self.root.join(MANIFEST_FILE), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Marks `stage` as failed and writes the manifest for what exists.
    pub fn fail(&mut self, stage: &str) -> std::io::Result<String> {
        self.manifest.failed_stage = Some(stage.into());
        self.manifest.stages.push(StageEntry {
            name: stage.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "failed".into(),
        });
        self.finish()
    }
}

/// sha256 of an existing manifest file.
pub fn manifest_hash(dir: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(dir.join(MANIFEST_FILE))?))
}
