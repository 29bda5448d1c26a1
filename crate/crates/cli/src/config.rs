use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protoseg_core::clustering::KMeansParams;
use protoseg_core::fsutil;
use protoseg_core::ingest::synth::{ClassStyle, PALETTE};
use protoseg_core::ingest::{SyntheticDatasetConfig, DEFAULT_BLOCK, DEFAULT_PATCH_SIZE};
use protoseg_core::prototype::{SamplingStrategy, DEFAULT_PURITY_THRESHOLD, DEFAULT_REPRESENTATIVES};
use protoseg_core::rng::derive_seed;
use protoseg_core::segmentation::{QueryMode, DEFAULT_CQ_RESTARTS, DEFAULT_GAMMA, DEFAULT_UPSAMPLE};
use protoseg_core::{Error, Result};

pub const DEFAULT_SUBSAMPLE: usize = 20_000;
pub const DEFAULT_ELBOW_RANGE: [usize; 2] = [2, 50];
pub const DEFAULT_RESTARTS: usize = 8;

/// Synthetic dataset parameters; the generator seed comes from the stage seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub image_count: usize,
    pub image_size: usize,
    pub class_count: usize,
    pub region_seed_count: usize,
    pub sigma: f64,
    /// Class colours; the default palette when absent.
    pub colors: Option<Vec<[u8; 3]>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_count: 20,
            image_size: 256,
            class_count: 4,
            region_seed_count: 3,
            sigma: 25.0,
            colors: None,
        }
    }
}

impl SynthSpec {
    pub fn dataset_config(&self, seed: u64) -> SyntheticDatasetConfig {
        let mut cfg = SyntheticDatasetConfig::with_palette(
            self.image_count,
            self.image_size,
            self.class_count,
            self.region_seed_count,
            self.sigma,
            seed,
        );
        if let Some(colors) = &self.colors {
            cfg.classes = colors
                .iter()
                .map(|&color| ClassStyle { color, sigma: self.sigma })
                .collect();
        } else if self.class_count > PALETTE.len() {
            cfg.classes.clear();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    /// Existing PPM images; `masks` holds `<stem>.pgm` ground truth.
    Directory {
        images: PathBuf,
        #[serde(default)]
        masks: Option<PathBuf>,
        /// Label map JSON; otherwise taken from the first ground-truth mask.
        #[serde(default)]
        label_map: Option<PathBuf>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic(SynthSpec::default())
    }
}

/// Per-stage seed overrides. Unset stages derive their seed from the master seed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSeeds {
    pub synth: Option<u64>,
    pub subsample: Option<u64>,
    pub cluster: Option<u64>,
    pub sampling: Option<u64>,
    pub query: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub synth: u64,
    pub subsample: u64,
    pub cluster: u64,
    pub sampling: u64,
    pub query: u64,
}

impl StageSeeds {
    pub fn resolve(&self, master: u64) -> ResolvedSeeds {
        let pick = |o: Option<u64>, stream: u64| o.unwrap_or_else(|| derive_seed(master, stream));
        ResolvedSeeds {
            synth: pick(self.synth, 0),
            subsample: pick(self.subsample, 1),
            cluster: pick(self.cluster, 2),
            sampling: pick(self.sampling, 3),
            query: pick(self.query, 4),
        }
    }
}

/// Full experiment description. Every field has a default, so `{}` is a
/// valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub patch_size: usize,
    pub block: usize,
    pub thumbnails: bool,
    /// Patches sampled for clustering; clamped to the corpus size.
    pub subsample: usize,
    /// Fixed cluster count; the elbow over `elbow_range` decides when absent.
    pub k: Option<usize>,
    pub elbow_range: [usize; 2],
    pub restarts: usize,
    pub kmeans: KMeansParams,
    pub t: usize,
    pub strategy: SamplingStrategy,
    pub threshold: f64,
    /// Oracle inspects every cluster member instead of the representatives.
    pub whole_cluster: bool,
    /// Verdicts file used instead of the oracle.
    pub verdicts: Option<PathBuf>,
    pub gamma: f64,
    pub mode: QueryMode,
    pub cq_restarts: usize,
    pub upsample: usize,
    pub seed: u64,
    pub seeds: StageSeeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("protoseg-run"),
            dataset: DatasetSource::default(),
            patch_size: DEFAULT_PATCH_SIZE,
            block: DEFAULT_BLOCK,
            thumbnails: true,
            subsample: DEFAULT_SUBSAMPLE,
            k: None,
            elbow_range: DEFAULT_ELBOW_RANGE,
            restarts: DEFAULT_RESTARTS,
            kmeans: KMeansParams::default(),
            t: DEFAULT_REPRESENTATIVES,
            strategy: SamplingStrategy::default(),
            threshold: DEFAULT_PURITY_THRESHOLD,
            whole_cluster: false,
            verdicts: None,
            gamma: DEFAULT_GAMMA,
            mode: QueryMode::default(),
            cq_restarts: DEFAULT_CQ_RESTARTS,
            upsample: DEFAULT_UPSAMPLE,
            seed: 0,
            seeds: StageSeeds::default(),
        }
    }
}

fn require_path(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::at_path(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
        ))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn seeds(&self) -> ResolvedSeeds {
        self.seeds.resolve(self.seed)
    }

    /// Checks every field and the existence of input paths without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.patch_size == 0 || self.patch_size % self.block != 0 {
            return Err(Error::invalid(format!(
                "patch_size {} must be a positive multiple of block {}",
                self.patch_size, self.block
            )));
        }
        if self.subsample == 0 {
            return Err(Error::invalid("subsample must be positive"));
        }
        match self.k {
            Some(k) if k < 2 => return Err(Error::invalid(format!("k = {k} must be at least 2"))),
            Some(_) => {}
            None => {
                let [lo, hi] = self.elbow_range;
                if lo < 2 || hi < lo + 2 {
                    return Err(Error::invalid(format!(
                        "elbow_range [{lo}, {hi}] must start at 2 or above and span at least 3 values"
                    )));
                }
            }
        }
        if self.restarts == 0 || self.cq_restarts == 0 {
            return Err(Error::invalid("restart counts must be positive"));
        }
        self.kmeans.validate()?;
        if self.t == 0 {
            return Err(Error::invalid("t must be positive"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} must be in [0, 1)", self.threshold)));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma {} must be finite and at least 1", self.gamma)));
        }
        if self.upsample == 0 {
            return Err(Error::invalid("upsample must be positive"));
        }
        match &self.dataset {
            DatasetSource::Synthetic(spec) => spec.dataset_config(0).validate()?,
            DatasetSource::Directory { images, masks, label_map } => {
                require_path(images)?;
                if let Some(m) = masks {
                    require_path(m)?;
                }
                if let Some(l) = label_map {
                    require_path(l)?;
                }
                if masks.is_none() && self.verdicts.is_none() {
                    return Err(Error::invalid(
                        "oracle labeling needs ground-truth masks; set dataset.masks or verdicts",
                    ));
                }
                if masks.is_none() && label_map.is_none() {
                    return Err(Error::invalid("without masks a label_map file is required"));
                }
            }
        }
        if let Some(v) = &self.verdicts {
            require_path(v)?;
        }
        Ok(())
    }
}
