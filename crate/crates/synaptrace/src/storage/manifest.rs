//! Benchmark manifest JSON. Run paths are relative to the manifest's
//! directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::catalogue::ModelConfigDoc;
use super::{read_json, write_json};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub id: String,
    #[serde(rename = "I")]
    pub num_sources: usize,
    #[serde(rename = "T")]
    pub num_times: usize,
    pub grid_shape: Vec<usize>,
    pub seed: u64,
    pub truth: String,
    pub observations: String,
    /// Directory holding inference output, once produced.
    #[serde(default)]
    pub results: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkManifest {
    pub version: u32,
    pub base_seed: u64,
    pub replicates: usize,
    pub sources: Vec<usize>,
    pub times: Vec<usize>,
    /// Model defaults shared by every run; `num_sources`/`num_times` are
    /// overridden per run.
    pub config: ModelConfigDoc,
    pub runs: Vec<RunEntry>,
}

impl BenchmarkManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Schema(format!("manifest version {} (expected {MANIFEST_VERSION})", self.version)));
        }
        let mut seeds = HashSet::new();
        let mut ids = HashSet::new();
        for run in &self.runs {
            if !seeds.insert(run.seed) {
                return Err(Error::Schema(format!("duplicate run seed {}", run.seed)));
            }
            if !ids.insert(run.id.as_str()) {
                return Err(Error::Schema(format!("duplicate run id {}", run.id)));
            }
            for p in [&run.truth, &run.observations].into_iter().chain(run.results.as_ref()) {
                if Path::new(p).is_absolute() || Path::new(p).components().any(|c| c == std::path::Component::ParentDir) {
                    return Err(Error::Schema(format!("run path {p:?} must be relative and inside the manifest directory")));
                }
            }
        }
        Ok(())
    }
}

/// Resolves a run path against the manifest location.
pub fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(relative)
}

pub fn write_manifest(path: &Path, manifest: &BenchmarkManifest) -> Result<()> {
    manifest.validate()?;
    write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<BenchmarkManifest> {
    let m: BenchmarkManifest = read_json(path)?;
    m.validate()?;
    Ok(m)
}
