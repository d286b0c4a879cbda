use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelfuse::config::{PipelineConfig, SourceFormat};
use labelfuse::core::bench::{BenchmarkParams, DetectorNoiseModel, Reviewer, WorldParams};
use labelfuse::core::fuse::{FusionConfig, FusionStrategy};
use labelfuse::pipeline::{self, EvalArgs, PipelineError};
use labelfuse::server;

/// Merge object-detection datasets into one label space, fuse detector
/// predictions into pseudo labels, review them, export and evaluate.
#[derive(Debug, Parser)]
#[command(name = "labelfuse", version)]
struct Cli {
    /// Pipeline configuration file (TOML) [default: labelfuse.toml].
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Base for relative dataset paths; overrides LABELFUSE_DATA_ROOT.
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the unified label space and per-dataset remap tables.
    Unify,
    /// Fuse foreign detections into accepted pseudo labels and a review queue.
    Fuse {
        /// Worker threads (0 = all cores); overrides the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Serve the review queue over HTTP.
    Serve {
        /// Review store directory [default: <output>/review_store].
        #[arg(long, value_name = "DIR")]
        store_path: Option<PathBuf>,
        /// Address to listen on.
        #[arg(long, value_name = "ADDR:PORT", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Fold review decisions into the unified dataset.
    Apply {
        /// Review store directory [default: <output>/review_store].
        #[arg(long, value_name = "DIR")]
        store_path: Option<PathBuf>,
    },
    /// Write the unified dataset as a COCO-style document.
    Export,
    /// Evaluate detections against ground truth.
    Eval(EvalCmd),
    /// Run the seeded synthetic pseudo-labelling benchmark.
    Bench(BenchCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GtFormat {
    Coco,
    Yolo,
}

#[derive(Debug, Args)]
struct EvalCmd {
    /// Ground truth: COCO document or YOLO directory.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "coco")]
    gt_format: GtFormat,
    /// Class names file for YOLO ground truth [default: <gt>/names.txt].
    #[arg(long, value_name = "PATH")]
    names: Option<PathBuf>,
    /// Detection-results document in the ground truth's label space.
    #[arg(long, value_name = "PATH")]
    detections: PathBuf,
    /// Minimum score counted for precision, recall and F1
    /// [default: config `f1_score_threshold`, else 0.5].
    #[arg(long)]
    score_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReviewerArg {
    None,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    WeightedAverage,
    HighestScore,
}

#[derive(Debug, Args)]
struct BenchCmd {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    datasets: usize,
    #[arg(long, default_value_t = 4)]
    classes_per_dataset: usize,
    /// Classes shared by neighbouring datasets.
    #[arg(long, default_value_t = 2)]
    overlap: usize,
    /// Total images, spread round-robin over the datasets.
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 4)]
    boxes_per_image: usize,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    /// Box jitter as a fraction of box size.
    #[arg(long, default_value_t = 0.08)]
    jitter_sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    drop_rate: f64,
    /// Expected false positives per image.
    #[arg(long, default_value_t = 0.5)]
    fp_rate: f64,
    #[arg(long, value_enum, default_value = "oracle")]
    reviewer: ReviewerArg,
    /// Detector indices used as pseudo-label sources [default: all].
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.7)]
    tau_accept: f64,
    #[arg(long, default_value_t = 0.05)]
    tau_discard: f64,
    #[arg(long, default_value_t = 0.55)]
    sigma_cluster: f64,
    #[arg(long, value_enum, default_value = "weighted-average")]
    strategy: StrategyArg,
}

impl BenchCmd {
    fn params(&self) -> BenchmarkParams {
        let base = DetectorNoiseModel::default();
        BenchmarkParams {
            world: WorldParams {
                seed: self.seed,
                n_datasets: self.datasets,
                classes_per_dataset: self.classes_per_dataset,
                overlap_classes: self.overlap,
                images: self.images,
                boxes_per_image: self.boxes_per_image,
                image_width: self.width,
                image_height: self.height,
            },
            noise: DetectorNoiseModel {
                jitter_sigma: self.jitter_sigma,
                drop_rate: self.drop_rate,
                fp_rate: self.fp_rate,
                tp_score: base.tp_score,
                fp_score: base.fp_score,
            },
            fusion: FusionConfig {
                tau_accept: self.tau_accept,
                tau_discard: self.tau_discard,
                sigma_cluster: self.sigma_cluster,
                strategy: match self.strategy {
                    StrategyArg::WeightedAverage => FusionStrategy::WeightedAverage,
                    StrategyArg::HighestScore => FusionStrategy::HighestScore,
                },
                suppress_gt_classes: true,
            },
            reviewer: match self.reviewer {
                ReviewerArg::None => Reviewer::None,
                ReviewerArg::Oracle => Reviewer::Oracle,
            },
            sources: self.sources.clone(),
        }
    }
}

const DEFAULT_CONFIG: &str = "labelfuse.toml";

fn config_path(cli: &Cli) -> PathBuf {
    cli.config.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let path = config_path(cli);
    let mut cfg = PipelineConfig::load(&path, cli.data_root.as_deref())?;
    if let Some(out) = &cli.output {
        cfg.output = out.clone();
    }
    log::info!("config {} -> output {}", path.display(), cfg.output.display());
    Ok(cfg)
}

/// Config for commands that can run without one.
fn optional_config(cli: &Cli) -> Result<Option<PipelineConfig>, PipelineError> {
    if cli.config.is_some() || Path::new(DEFAULT_CONFIG).exists() {
        load_config(cli).map(Some)
    } else {
        Ok(None)
    }
}

fn output_dir(cli: &Cli, cfg: Option<&PipelineConfig>) -> PathBuf {
    cli.output.clone().or_else(|| cfg.map(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("labelfuse-out"))
}

fn read_names(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn serve(cfg: &PipelineConfig, store_path: &Path, listen: SocketAddr) -> Result<(), PipelineError> {
    let (state, added) = pipeline::prepare_serve(cfg, store_path)?;
    log::info!("review store {}: {added} new items", store_path.display());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Semantic(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await.map_err(|e| {
            PipelineError::Config(labelfuse::config::ConfigError::Invalid(format!("listen {listen}: {e}")))
        })?;
        let addr = listener.local_addr().map_err(|e| PipelineError::Semantic(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        axum::serve(listener, server::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| PipelineError::Semantic(e.to_string()))
    })
}

fn run(cli: &Cli) -> Result<String, PipelineError> {
    match &cli.command {
        Command::Unify => pipeline::cmd_unify(&load_config(cli)?),
        Command::Fuse { threads } => {
            let mut cfg = load_config(cli)?;
            if let Some(t) = threads {
                cfg.threads = *t;
            }
            pipeline::cmd_fuse(&cfg)
        }
        Command::Serve { store_path, listen } => {
            let cfg = load_config(cli)?;
            let store = pipeline::store_dir(&cfg, store_path.as_deref());
            serve(&cfg, &store, *listen).map(|()| String::new())
        }
        Command::Apply { store_path } => {
            let cfg = load_config(cli)?;
            let store = pipeline::store_dir(&cfg, store_path.as_deref());
            pipeline::cmd_apply(&cfg, &store).map(|(_, text)| text)
        }
        Command::Export => pipeline::cmd_export(&load_config(cli)?),
        Command::Eval(e) => {
            let cfg = optional_config(cli)?;
            let names = e.names.as_deref().map(read_names).transpose()?;
            let output = output_dir(cli, cfg.as_ref());
            let args = EvalArgs {
                gt: &e.gt,
                gt_format: match e.gt_format {
                    GtFormat::Coco => SourceFormat::Coco,
                    GtFormat::Yolo => SourceFormat::Yolo,
                },
                names,
                detections: &e.detections,
                score_threshold: e.score_threshold.or(cfg.as_ref().map(|c| c.f1_score_threshold)).unwrap_or(0.5),
                output: &output,
            };
            pipeline::cmd_eval(&args).map(|(_, text)| text)
        }
        Command::Bench(b) => {
            let output = output_dir(cli, optional_config(cli)?.as_ref());
            pipeline::cmd_bench(&b.params(), &output).map(|(_, text)| text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
