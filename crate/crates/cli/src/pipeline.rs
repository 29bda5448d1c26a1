//! The full experiment: synth or read images, featurize, subsample, cluster,
//! sample representatives, label, build the dictionary, segment, evaluate.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{DatasetSource, PipelineConfig};
use crate::manifest::{digest_files, FormatVersions, Manifest, RunSummary, StageRecord};
use crate::stages::{self, FeaturizeOptions, SegmentOptions, GT_DIR, MASKS_DIR};
use protoseg_core::clustering::{ClusteringResult, ElbowTrace};
use protoseg_core::evaluation::EvalReport;
use protoseg_core::fsutil;
use protoseg_core::ingest::formats::{sidecar_path, write_set, FORMAT_VERSION};
use protoseg_core::labels::TissueLabelMap;
use protoseg_core::prototype::{build_dictionary, save_dictionary, ClusterVerdict, PrototypeDictionary, DICTIONARY_VERSION};
use protoseg_core::segmentation::{mask_sidecar_path, read_mask, CqConfig};
use protoseg_core::{Error, ErrorKind};

pub const SUBSAMPLE_FILE: &str = "subsample.esf";
pub const CLUSTERING_FILE: &str = "clustering.json";
pub const ELBOW_FILE: &str = "elbow.json";
pub const REPRESENTATIVES_FILE: &str = "representatives.json";
pub const VERDICTS_FILE: &str = "verdicts.json";
pub const DICTIONARY_FILE: &str = "dictionary.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A core error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.source.kind())
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numeric => 4,
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub elbow: Option<ElbowTrace>,
    pub clustering: ClusteringResult,
    pub verdicts: Vec<ClusterVerdict>,
    pub dictionary: PrototypeDictionary,
    pub report: Option<EvalReport>,
    pub masks: Vec<PathBuf>,
}

struct Recorder<'a> {
    root: &'a Path,
    stages: Vec<StageRecord>,
}

impl Recorder<'_> {
    /// Runs `f`, which returns its value and the files it wrote, and records
    /// the wall-clock time and output digests.
    fn run<T>(
        &mut self,
        stage: &'static str,
        f: impl FnOnce() -> protoseg_core::Result<(T, Vec<PathBuf>)>,
    ) -> Result<T, StageError> {
        let tag = |source| StageError { stage, source };
        let start = Instant::now();
        let (value, files) = f().map_err(tag)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let outputs = digest_files(self.root, &files).map_err(tag)?;
        tracing::info!(stage, wall_ms, files = outputs.len(), "stage finished");
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            wall_ms,
            outputs,
        });
        Ok(value)
    }
}

struct Dataset {
    images: Vec<PathBuf>,
    gt_dir: Option<PathBuf>,
    label_map: TissueLabelMap,
}

fn label_map_from(path: Option<&Path>, gt_dir: Option<&Path>, images: &[PathBuf]) -> protoseg_core::Result<TissueLabelMap> {
    if let Some(p) = path {
        return fsutil::read_json(p);
    }
    let dir = gt_dir.ok_or_else(|| Error::invalid("no label map source"))?;
    let first = images.first().ok_or(Error::Empty("image list"))?;
    let mask = read_mask(&dir.join(format!("{}.pgm", stages::file_stem(first)?)))?;
    Ok(mask.label_map().clone())
}

/// Runs every stage under `cfg.output_dir` and writes `manifest.json` there.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, StageError> {
    cfg.validate().map_err(|source| StageError { stage: "config", source })?;
    let seeds = cfg.seeds();
    let root = cfg.output_dir.as_path();
    let mut rec = Recorder { root, stages: Vec::new() };

    let data = rec.run("synth", || match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let out = stages::write_synthetic(&spec.dataset_config(seeds.synth), root)?;
            let files = out.files();
            Ok((
                Dataset {
                    images: out.images,
                    gt_dir: Some(root.join(GT_DIR)),
                    label_map: out.label_map,
                },
                files,
            ))
        }
        DatasetSource::Directory { images, masks, label_map } => {
            let list = stages::list_files(images, "ppm")?;
            let label_map = label_map_from(label_map.as_deref(), masks.as_deref(), &list)?;
            Ok((
                Dataset {
                    images: list,
                    gt_dir: masks.clone(),
                    label_map,
                },
                Vec::new(),
            ))
        }
    })?;

    let feats = rec.run("featurize", || {
        let opts = FeaturizeOptions {
            patch_size: cfg.patch_size,
            block: cfg.block,
            thumbnails: cfg.thumbnails,
        };
        let out = stages::featurize_images(&data.images, data.gt_dir.as_deref(), root, opts)?;
        let files = out.files();
        Ok((out, files))
    })?;

    let sub = rec.run("subsample", || {
        let sub = stages::subsample(&feats.set, cfg.subsample, seeds.subsample)?;
        let path = root.join(SUBSAMPLE_FILE);
        write_set(&path, &sub)?;
        Ok((sub, vec![path.clone(), sidecar_path(&path)]))
    })?;

    let (elbow, clustering) = rec.run("cluster", || {
        let (elbow, result) = match cfg.k {
            Some(k) => (None, stages::cluster_set(&sub, k, cfg.restarts, seeds.cluster, &cfg.kmeans)?),
            None => {
                let [lo, hi] = cfg.elbow_range;
                let hi = hi.min(sub.len());
                let (trace, result) = stages::elbow_set(&sub, lo, hi, cfg.restarts, seeds.cluster, &cfg.kmeans)?;
                (Some(trace), result)
            }
        };
        let mut files = vec![root.join(CLUSTERING_FILE)];
        fsutil::write_json(&files[0], &result)?;
        if let Some(trace) = &elbow {
            let p = root.join(ELBOW_FILE);
            fsutil::write_json(&p, trace)?;
            files.push(p);
        }
        Ok(((elbow, result), files))
    })?;

    let reps = rec.run("sample-reps", || {
        let reps = stages::sample_all(&sub, &clustering, cfg.t, cfg.strategy, seeds.sampling)?;
        let p = root.join(REPRESENTATIVES_FILE);
        fsutil::write_json(&p, &reps)?;
        Ok((reps, vec![p]))
    })?;

    let verdicts = rec.run("label", || {
        let verdicts: Vec<ClusterVerdict> = match &cfg.verdicts {
            Some(path) => fsutil::read_json(path)?,
            None => stages::oracle_verdicts(&sub, &clustering, &reps, &data.label_map, cfg.threshold, cfg.whole_cluster)?,
        };
        let p = root.join(VERDICTS_FILE);
        fsutil::write_json(&p, &verdicts)?;
        Ok((verdicts, vec![p]))
    })?;

    let dictionary = rec.run("build-dict", || {
        let dict = build_dictionary(&clustering, &verdicts, &data.label_map)?;
        let p = root.join(DICTIONARY_FILE);
        save_dictionary(&dict, &p)?;
        Ok((dict, vec![p]))
    })?;

    let masks = rec.run("segment", || {
        let opts = SegmentOptions {
            mode: cfg.mode,
            cq: CqConfig {
                gamma: cfg.gamma,
                restarts: cfg.cq_restarts,
                rng_seed: seeds.query,
            },
            upsample: cfg.upsample,
        };
        let masks = stages::segment_grids(&feats.grids, &dictionary, &opts, &root.join(MASKS_DIR))?;
        let files = masks.iter().flat_map(|m| [m.clone(), mask_sidecar_path(m)]).collect();
        Ok((masks, files))
    })?;

    let report = match &data.gt_dir {
        Some(gt_dir) => Some(rec.run("evaluate", || {
            let gts = masks
                .iter()
                .map(|m| Ok(gt_dir.join(m.file_name().ok_or_else(|| Error::invalid("mask path"))?)))
                .collect::<protoseg_core::Result<Vec<_>>>()?;
            let report = stages::evaluate_paths(&masks, &gts)?;
            let p = root.join(REPORT_FILE);
            fsutil::write_json(&p, &report)?;
            Ok((report, vec![p]))
        })?),
        None => None,
    };

    let manifest = Manifest {
        tool: "protoseg".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        formats: FormatVersions {
            embedding_grid: FORMAT_VERSION,
            embedding_set: FORMAT_VERSION,
            dictionary: DICTIONARY_VERSION,
        },
        config: cfg.clone(),
        seeds,
        stages: rec.stages,
        summary: RunSummary {
            patch_count: feats.set.len(),
            subsample_size: sub.len(),
            selected_k: clustering.k,
            prototypes: dictionary.len(),
            macro_dice: report.as_ref().map(|r| r.macro_dice),
            macro_pixel_accuracy: report.as_ref().map(|r| r.macro_pixel_accuracy),
        },
    };
    let manifest_path = root.join(MANIFEST_FILE);
    fsutil::write_json(&manifest_path, &manifest).map_err(|source| StageError { stage: "manifest", source })?;

    Ok(PipelineOutcome {
        manifest,
        manifest_path,
        elbow,
        clustering,
        verdicts,
        dictionary,
        report,
        masks,
    })
}
