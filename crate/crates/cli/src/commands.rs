use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{PipelineConfig, SynthSpec};
use crate::pipeline::{run_pipeline, StageError};
use crate::stages::{self, FeaturizeOptions, RepresentativeSet, SegmentOptions};
use protoseg_core::clustering::{cluster_canonical, ClusteringResult, Initialization, KMeansParams};
use protoseg_core::fsutil;
use protoseg_core::ingest::formats::{read_grid, read_set, write_set};
use protoseg_core::ingest::{DEFAULT_BLOCK, DEFAULT_PATCH_SIZE};
use protoseg_core::labels::TissueLabelMap;
use protoseg_core::prototype::{
    build_dictionary, load_dictionary, save_dictionary, ClusterVerdict, SamplingStrategy,
    DEFAULT_PURITY_THRESHOLD, DEFAULT_REPRESENTATIVES,
};
use protoseg_core::segmentation::{write_mask, CqConfig, QueryMode, DEFAULT_CQ_RESTARTS, DEFAULT_GAMMA, DEFAULT_UPSAMPLE};
use protoseg_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "protoseg", version, about = "Prototype-based segmentation from patch embeddings")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image set with ground-truth masks.
    Synth(SynthArgs),
    /// Embed images into grids and a patch corpus.
    Featurize(FeaturizeArgs),
    /// Uniformly subsample a patch corpus.
    Subsample(SubsampleArgs),
    /// K-Means++ clustering at a fixed k.
    Cluster(ClusterArgs),
    /// Inertia curve over a range of k and the elbow choice.
    Elbow(ElbowArgs),
    /// Representative patches per cluster.
    SampleReps(SampleRepsArgs),
    /// Simulated rater verdicts from ground-truth proportions.
    OracleLabel(OracleArgs),
    /// Prototype dictionary from a clustering and its verdicts.
    BuildDict(BuildDictArgs),
    /// Label embedding grids with a dictionary.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Run every stage from one config file.
    Pipeline(PipelineArgs),
    /// Start the labeling service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with synthetic dataset parameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Directory of PPM images.
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of ground-truth `<stem>.pgm` masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK)]
    pub block: usize,
    #[arg(long)]
    pub no_thumbnails: bool,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = crate::config::DEFAULT_SUBSAMPLE)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    PlusPlus,
    Random,
}

#[derive(Debug, Args)]
pub struct KMeansArgs {
    #[arg(long, default_value_t = crate::config::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::PlusPlus)]
    pub init: InitArg,
    /// Plain Lloyd iteration without single-point transfers.
    #[arg(long)]
    pub no_transfers: bool,
}

impl KMeansArgs {
    fn params(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.max_iter,
            tol: self.tol,
            init: match self.init {
                InitArg::PlusPlus => Initialization::PlusPlus,
                InitArg::Random => Initialization::Random,
            },
            transfers: !self.no_transfers,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
    /// Cluster in content-hash order so the result ignores input order.
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ElbowArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_k: usize,
    #[arg(long, default_value_t = 50)]
    pub max_k: usize,
    #[command(flatten)]
    pub kmeans: KMeansArgs,
    /// Elbow trace JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the clustering at the selected k.
    #[arg(long)]
    pub clustering_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleRepsArgs {
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPRESENTATIVES)]
    pub t: usize,
    #[arg(long, default_value = "central")]
    pub strategy: SamplingStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long)]
    pub reps: PathBuf,
    #[arg(long)]
    pub label_map: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PURITY_THRESHOLD)]
    pub threshold: f64,
    /// Inspect every cluster member rather than the representatives.
    #[arg(long)]
    pub whole_cluster: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildDictArgs {
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub label_map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// An EGF file, or a directory of them.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value = "cq")]
    pub mode: QueryMode,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CQ_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_UPSAMPLE)]
    pub upsample: usize,
    /// PGM path for a single grid, directory for a grid directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    /// Pipeline config JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_k: Option<usize>,
    #[arg(long)]
    pub max_k: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub strategy: Option<SamplingStrategy>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub mode: Option<QueryMode>,
    #[arg(long)]
    pub upsample: Option<usize>,
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
}

impl PipelineArgs {
    /// The config file (or defaults) with flag overrides applied.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = Some(v);
        }
        if let Some(v) = self.min_k {
            cfg.elbow_range[0] = v;
        }
        if let Some(v) = self.max_k {
            cfg.elbow_range[1] = v;
        }
        if let Some(v) = self.restarts {
            cfg.restarts = v;
        }
        if let Some(v) = self.subsample {
            cfg.subsample = v;
        }
        if let Some(v) = self.t {
            cfg.t = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.upsample {
            cfg.upsample = v;
        }
        if let Some(v) = &self.verdicts {
            cfg.verdicts = Some(v.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding session directories.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Allowed CORS origin (any origin when absent).
    #[arg(long)]
    pub origin: Option<String>,
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => fsutil::read_json(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?,
        None => SynthSpec::default(),
    };
    spec.image_count = a.images.unwrap_or(spec.image_count);
    spec.image_size = a.size.unwrap_or(spec.image_size);
    spec.class_count = a.classes.unwrap_or(spec.class_count);
    spec.region_seed_count = a.regions.unwrap_or(spec.region_seed_count);
    spec.sigma = a.sigma.unwrap_or(spec.sigma);
    stages::write_synthetic(&spec.dataset_config(a.seed), &a.out)?;
    Ok(())
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let images = stages::list_files(&a.images, "ppm")?;
    let opts = FeaturizeOptions {
        patch_size: a.patch_size,
        block: a.block,
        thumbnails: !a.no_thumbnails,
    };
    stages::featurize_images(&images, a.masks.as_deref(), &a.out, opts)?;
    Ok(())
}

fn read_clustering(path: &Path) -> Result<ClusteringResult> {
    let r: ClusteringResult = fsutil::read_json(path)?;
    r.validate(None)?;
    Ok(r)
}

fn segment(a: &SegmentArgs) -> Result<()> {
    let dict = load_dictionary(&a.dict)?;
    let opts = SegmentOptions {
        mode: a.mode,
        cq: CqConfig {
            gamma: a.gamma,
            restarts: a.restarts,
            rng_seed: a.seed,
        },
        upsample: a.upsample,
    };
    if a.grid.is_dir() {
        let grids = stages::list_files(&a.grid, "egf")?;
        if grids.is_empty() {
            return Err(Error::Empty("grid directory"));
        }
        stages::segment_grids(&grids, &dict, &opts, &a.out)?;
    } else {
        let mask = stages::segment_grid(&read_grid(&a.grid)?, &dict, &opts)?;
        write_mask(&mask, &a.out)?;
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let origin = a
        .origin
        .as_deref()
        .map(|o| {
            protoseg_service::HeaderValue::from_str(o)
                .map_err(|e| Error::invalid(format!("origin {o:?}: {e}")))
        })
        .transpose()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::Io)?;
    rt.block_on(protoseg_service::serve(a.addr, &a.root, origin))
        .map_err(Error::Io)
}

/// Executes one parsed command line.
pub fn run(cli: &Cli) -> std::result::Result<(), StageError> {
    if let Some(n) = cli.threads {
        in_stage(
            "config",
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::invalid(format!("thread pool: {e}"))),
        )?;
    }
    match &cli.command {
        Command::Synth(a) => in_stage("synth", synth(a)),
        Command::Featurize(a) => in_stage("featurize", featurize(a)),
        Command::Subsample(a) => in_stage(
            "subsample",
            (|| {
                let set = read_set(&a.input)?;
                write_set(&a.out, &stages::subsample(&set, a.m, a.seed)?)
            })(),
        ),
        Command::Cluster(a) => in_stage(
            "cluster",
            (|| {
                let set = read_set(&a.input)?;
                let params = a.kmeans.params();
                let result = if a.canonical {
                    cluster_canonical(&stages::points_of(&set)?, a.k, a.kmeans.restarts, a.kmeans.seed, &params)?
                } else {
                    stages::cluster_set(&set, a.k, a.kmeans.restarts, a.kmeans.seed, &params)?
                };
                fsutil::write_json(&a.out, &result)
            })(),
        ),
        Command::Elbow(a) => in_stage(
            "elbow",
            (|| {
                let set = read_set(&a.input)?;
                let (trace, result) =
                    stages::elbow_set(&set, a.min_k, a.max_k, a.kmeans.restarts, a.kmeans.seed, &a.kmeans.params())?;
                fsutil::write_json(&a.out, &trace)?;
                if let Some(p) = &a.clustering_out {
                    fsutil::write_json(p, &result)?;
                }
                Ok(())
            })(),
        ),
        Command::SampleReps(a) => in_stage(
            "sample-reps",
            (|| {
                let set = read_set(&a.patches)?;
                let result = read_clustering(&a.clustering)?;
                fsutil::write_json(&a.out, &stages::sample_all(&set, &result, a.t, a.strategy, a.seed)?)
            })(),
        ),
        Command::OracleLabel(a) => in_stage(
            "oracle-label",
            (|| {
                let set = read_set(&a.patches)?;
                let result = read_clustering(&a.clustering)?;
                let reps: RepresentativeSet = fsutil::read_json(&a.reps)?;
                let labels: TissueLabelMap = fsutil::read_json(&a.label_map)?;
                let verdicts = stages::oracle_verdicts(&set, &result, &reps, &labels, a.threshold, a.whole_cluster)?;
                fsutil::write_json(&a.out, &verdicts)
            })(),
        ),
        Command::BuildDict(a) => in_stage(
            "build-dict",
            (|| {
                let result = read_clustering(&a.clustering)?;
                let verdicts: Vec<ClusterVerdict> = fsutil::read_json(&a.verdicts)?;
                let labels: TissueLabelMap = fsutil::read_json(&a.label_map)?;
                save_dictionary(&build_dictionary(&result, &verdicts, &labels)?, &a.out)
            })(),
        ),
        Command::Segment(a) => in_stage("segment", segment(a)),
        Command::Evaluate(a) => in_stage(
            "evaluate",
            (|| fsutil::write_json(&a.out, &stages::evaluate_dirs(&a.pred, &a.gt)?))(),
        ),
        Command::Pipeline(a) => {
            let cfg = in_stage("config", a.resolve())?;
            let outcome = run_pipeline(&cfg)?;
            let s = &outcome.manifest.summary;
            println!(
                "k={} prototypes={} macro_dice={} pixel_accuracy={} manifest={}",
                s.selected_k,
                s.prototypes,
                s.macro_dice.map_or("n/a".into(), |v| format!("{v:.4}")),
                s.macro_pixel_accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
                outcome.manifest_path.display()
            );
            Ok(())
        }
        Command::Serve(a) => in_stage("serve", serve(a)),
    }
}
