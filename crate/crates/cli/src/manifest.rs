use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, ResolvedSeeds};
use crate::stages::sha256_file;
use protoseg_core::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub wall_ms: f64,
    pub outputs: Vec<OutputDigest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub embedding_grid: u16,
    pub embedding_set: u16,
    pub dictionary: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub patch_count: usize,
    pub subsample_size: usize,
    pub selected_k: usize,
    pub prototypes: usize,
    pub macro_dice: Option<f64>,
    pub macro_pixel_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub formats: FormatVersions,
    pub config: PipelineConfig,
    pub seeds: ResolvedSeeds,
    pub stages: Vec<StageRecord>,
    pub summary: RunSummary,
}

impl Manifest {
    /// Output path to digest over all stages.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())))
            .collect()
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Digests of `files`, with paths relative to `root` and `/` separators.
pub fn digest_files(root: &Path, files: &[PathBuf]) -> Result<Vec<OutputDigest>> {
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(f);
        let path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = std::fs::metadata(f)
            .map_err(|e| protoseg_core::Error::at_path(f, e))?
            .len();
        out.push(OutputDigest {
            path,
            bytes,
            sha256: sha256_file(f)?,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}
