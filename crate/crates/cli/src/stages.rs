//! File-level stage operations shared by the subcommands and the pipeline.
//!
//! Every function here is a pure function of its inputs and seed, and writes
//! its outputs atomically, so rerunning a stage reproduces its files byte for
//! byte.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use protoseg_core::clustering::{cluster, elbow_select, ClusteringResult, ElbowTrace, KMeansParams, Points};
use protoseg_core::embedding::EmbeddingGrid;
use protoseg_core::evaluation::{evaluate_dataset, EvalReport};
use protoseg_core::fsutil;
use protoseg_core::ingest::featurize::patch_embed_from_grid;
use protoseg_core::ingest::formats::{read_grid, sidecar_path, write_grid, write_set};
use protoseg_core::ingest::{
    block_featurize, class_proportions, crop_patches, generate_synthetic_dataset, subsample_patches,
    PatchEmbeddingSet, SourceImage, SyntheticDatasetConfig, FEATURE_DIM,
};
use protoseg_core::labels::TissueLabelMap;
use protoseg_core::prototype::{
    sample_representatives, simulated_label, ClusterVerdict, PrototypeDictionary, Rater, SamplingStrategy,
};
use protoseg_core::rng::derive_seed;
use protoseg_core::segmentation::{
    mask_sidecar_path, query, read_mask, upsample_mask, write_mask, ClassMask, CqConfig, QueryMode,
};
use protoseg_core::{Error, Result};

pub const IMAGES_DIR: &str = "images";
pub const GT_DIR: &str = "gt";
pub const GRIDS_DIR: &str = "grids";
pub const THUMBS_DIR: &str = "thumbs";
pub const MASKS_DIR: &str = "masks";
pub const LABEL_MAP_FILE: &str = "label_map.json";
pub const PATCHES_FILE: &str = "patches.esf";

/// Files in `dir` with extension `ext`, sorted by file name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::at_path(dir, e))? {
        let path = entry.map_err(|e| Error::at_path(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::invalid(format!("{} has no usable file name", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::at_path(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Images written by [`write_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub images: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    pub label_map_path: PathBuf,
    pub label_map: TissueLabelMap,
}

impl SyntheticOutput {
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out = self.images.clone();
        for m in &self.masks {
            out.push(m.clone());
            out.push(mask_sidecar_path(m));
        }
        out.push(self.label_map_path.clone());
        out
    }
}

/// Writes `images/img_NNN.ppm`, `gt/img_NNN.pgm` and `label_map.json` under `out`.
pub fn write_synthetic(cfg: &SyntheticDatasetConfig, out: &Path) -> Result<SyntheticOutput> {
    let (images, masks) = generate_synthetic_dataset(cfg)?;
    let label_map = cfg.label_map()?;
    let mut written = SyntheticOutput {
        images: Vec::new(),
        masks: Vec::new(),
        label_map_path: out.join(LABEL_MAP_FILE),
        label_map: label_map.clone(),
    };
    for (i, (img, mask)) in images.iter().zip(&masks).enumerate() {
        let id = format!("img_{i:03}");
        let img_path = out.join(IMAGES_DIR).join(format!("{id}.ppm"));
        let mask_path = out.join(GT_DIR).join(format!("{id}.pgm"));
        img.write_ppm(&img_path)?;
        write_mask(mask, &mask_path)?;
        written.images.push(img_path);
        written.masks.push(mask_path);
    }
    fsutil::write_json(&written.label_map_path, &label_map)?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizeOptions {
    pub patch_size: usize,
    pub block: usize,
    pub thumbnails: bool,
}

/// Outputs of [`featurize_images`].
#[derive(Debug, Clone)]
pub struct FeaturizeOutput {
    pub set: PatchEmbeddingSet,
    pub patches_path: PathBuf,
    pub grids: Vec<PathBuf>,
    pub thumbnails: Vec<PathBuf>,
}

impl FeaturizeOutput {
    pub fn files(&self) -> Vec<PathBuf> {
        let mut out = self.grids.clone();
        out.extend(self.thumbnails.iter().cloned());
        out.push(self.patches_path.clone());
        out.push(sidecar_path(&self.patches_path));
        out
    }
}

/// Featurizes each image into `out/grids/<stem>.egf`, tiles it into patches
/// embedded from that grid, and writes the corpus to `out/patches.esf`.
///
/// When `masks_dir` is given, every image needs a `<stem>.pgm` mask there and
/// each patch records its ground-truth class proportions. Thumbnail paths are
/// stored relative to `out`.
pub fn featurize_images(
    images: &[PathBuf],
    masks_dir: Option<&Path>,
    out: &Path,
    opts: FeaturizeOptions,
) -> Result<FeaturizeOutput> {
    if opts.block == 0 || opts.patch_size == 0 || opts.patch_size % opts.block != 0 {
        return Err(Error::invalid(format!(
            "patch size {} must be a positive multiple of block {}",
            opts.patch_size, opts.block
        )));
    }
    if images.is_empty() {
        return Err(Error::Empty("image list"));
    }
    let mut records = Vec::new();
    let mut grids = Vec::new();
    let mut thumbnails = Vec::new();
    for path in images {
        let id = file_stem(path)?;
        let img = SourceImage::read_ppm(path)?;
        let grid = block_featurize(&img, opts.block)?;
        let grid_path = out.join(GRIDS_DIR).join(format!("{id}.egf"));
        write_grid(&grid_path, &grid)?;
        grids.push(grid_path);

        let mask = match masks_dir {
            Some(dir) => {
                let m = read_mask(&dir.join(format!("{id}.pgm")))?;
                if m.width() != img.width() || m.height() != img.height() {
                    return Err(Error::invalid(format!(
                        "mask for {id} is {}x{}, image is {}x{}",
                        m.width(),
                        m.height(),
                        img.width(),
                        img.height()
                    )));
                }
                Some(m)
            }
            None => None,
        };

        for mut rec in crop_patches(&img, &id, opts.patch_size, records.len() as u64)? {
            let geom = rec.geometry(opts.patch_size);
            rec.embedding = patch_embed_from_grid(&grid, &geom, opts.block)?;
            if let Some(m) = &mask {
                rec.gt_proportions = Some(class_proportions(m, &geom)?);
            }
            if opts.thumbnails {
                let rel = format!("{THUMBS_DIR}/{}.ppm", rec.patch_id);
                let thumb = out.join(&rel);
                img.crop(geom.x, geom.y, geom.size, geom.size)?.write_ppm(&thumb)?;
                thumbnails.push(thumb);
                rec.thumbnail = Some(rel);
            }
            records.push(rec);
        }
    }
    let set = PatchEmbeddingSet::new(FEATURE_DIM, records)?;
    let patches_path = out.join(PATCHES_FILE);
    write_set(&patches_path, &set)?;
    Ok(FeaturizeOutput {
        set,
        patches_path,
        grids,
        thumbnails,
    })
}

/// Uniform subsample of `min(m, n)` patches. Taking every patch returns the
/// set unchanged.
pub fn subsample(set: &PatchEmbeddingSet, m: usize, seed: u64) -> Result<PatchEmbeddingSet> {
    if m == 0 {
        return Err(Error::invalid("subsample size must be positive"));
    }
    if m >= set.len() {
        return Ok(set.clone());
    }
    subsample_patches(set, m, seed)
}

pub fn points_of(set: &PatchEmbeddingSet) -> Result<Points> {
    Points::new(set.dim(), &set.embedding_matrix())
}

pub fn cluster_set(
    set: &PatchEmbeddingSet,
    k: usize,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    cluster(&points_of(set)?, k, restarts, seed, params)
}

/// Elbow trace over `lo..=hi` and the clustering at the selected `k`. The
/// clustering is the elbow's own run at that `k`, recomputed from the same
/// derived seed.
pub fn elbow_set(
    set: &PatchEmbeddingSet,
    lo: usize,
    hi: usize,
    restarts: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<(ElbowTrace, ClusteringResult)> {
    let points = points_of(set)?;
    let trace = elbow_select(&points, lo..=hi, restarts, seed, params)?;
    let k = trace.selected_k;
    let result = cluster(&points, k, restarts, derive_seed(seed, k as u64), params)?;
    Ok((trace, result))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRepresentatives {
    pub cluster_index: usize,
    pub size: usize,
    pub patch_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub t: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub clusters: Vec<ClusterRepresentatives>,
}

pub fn sample_all(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    t: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<RepresentativeSet> {
    let clusters = (0..result.k)
        .map(|c| {
            Ok(ClusterRepresentatives {
                cluster_index: c,
                size: result.cluster_sizes[c],
                patch_ids: sample_representatives(set, result, c, t, strategy, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RepresentativeSet {
        t,
        strategy,
        seed,
        clusters,
    })
}

/// Simulated verdict for every cluster. The rater sees the representatives,
/// or every member when `whole_cluster` is set.
pub fn oracle_verdicts(
    set: &PatchEmbeddingSet,
    result: &ClusteringResult,
    reps: &RepresentativeSet,
    label_map: &TissueLabelMap,
    threshold: f64,
    whole_cluster: bool,
) -> Result<Vec<ClusterVerdict>> {
    if reps.clusters.len() != result.k {
        return Err(Error::invalid(format!(
            "{} representative lists for {} clusters",
            reps.clusters.len(),
            result.k
        )));
    }
    let mut out = Vec::with_capacity(result.k);
    for (c, card) in reps.clusters.iter().enumerate() {
        if card.cluster_index != c {
            return Err(Error::invalid("representative lists must be in cluster order"));
        }
        let ids: Vec<u64> = if whole_cluster {
            result
                .members(c)
                .into_iter()
                .map(|i| set.records()[i].patch_id)
                .collect()
        } else {
            card.patch_ids.clone()
        };
        let inspected = ids
            .iter()
            .map(|&id| {
                set.position_of(id)
                    .map(|i| &set.records()[i])
                    .ok_or_else(|| Error::invalid(format!("patch {id} is not in the patch set")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ClusterVerdict {
            cluster_index: c,
            decision: simulated_label(&inspected, label_map, threshold)?,
            decided_by: Rater::Oracle,
            inspected_patch_ids: ids,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    pub mode: QueryMode,
    pub cq: CqConfig,
    pub upsample: usize,
}

pub fn segment_grid(grid: &EmbeddingGrid, dict: &PrototypeDictionary, opts: &SegmentOptions) -> Result<ClassMask> {
    let labels = query(grid, dict, opts.mode, &opts.cq)?;
    upsample_mask(&labels, opts.upsample)
}

/// Segments each grid into `out/<stem>.pgm` (plus sidecar); returns the mask paths.
pub fn segment_grids(
    grids: &[PathBuf],
    dict: &PrototypeDictionary,
    opts: &SegmentOptions,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(grids.len());
    for path in grids {
        let mask = segment_grid(&read_grid(path)?, dict, opts)?;
        let mask_path = out.join(format!("{}.pgm", file_stem(path)?));
        write_mask(&mask, &mask_path)?;
        written.push(mask_path);
    }
    Ok(written)
}

/// Pairs `<name>.pgm` masks across the two directories; every file must
/// have a partner.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let preds = list_files(pred_dir, "pgm")?;
    let gts = list_files(gt_dir, "pgm")?;
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().map(|n| n.to_owned())).collect::<Vec<_>>();
    if names(&preds) != names(&gts) {
        return Err(Error::invalid(format!(
            "prediction and ground-truth directories hold different mask names ({} vs {} files)",
            preds.len(),
            gts.len()
        )));
    }
    evaluate_paths(&preds, &gts)
}

pub fn evaluate_paths(preds: &[PathBuf], gts: &[PathBuf]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            expected: gts.len(),
            found: preds.len(),
        });
    }
    let pred_masks = preds.iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?;
    let gt_masks = gts.iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&ClassMask, &ClassMask)> = pred_masks.iter().zip(&gt_masks).collect();
    evaluate_dataset(&pairs)
}
