//! Pipeline stages. Each stage reads its inputs from the config and from the
//! artifacts of earlier stages in the output directory, and writes its own
//! artifacts there.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use labelfuse_core::bench::{run_benchmark, BenchmarkParams, BenchmarkReport};
use labelfuse_core::fuse::FusionReport;
use labelfuse_core::metrics::{evaluate, MetricsReport};
use labelfuse_core::model::{Annotation, Dataset, Detection, LabelSpace, UnifiedDataset};
use labelfuse_core::review::{apply_decisions, ApplyReport, ReviewItem};
use labelfuse_core::unify::{build_unified_space, remap_dataset, remap_detections, AliasMap, RemapTable, UnifyError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DatasetSource, PipelineConfig, SourceFormat};
use crate::ingest::{
    export_coco, parse_coco_dataset, parse_coco_unified, parse_detections, parse_yolo_dataset, read_names, IngestError,
    ParseReport,
};
use crate::parallel::fuse_dataset_parallel;
use crate::report::{bench_table, fusion_text, metrics_table};
use crate::server::ServerState;
use crate::store::{self, ReviewStore, StoreError};

pub const LABELSPACE: &str = "labelspace.json";
pub const REMAP_DIR: &str = "remap";
pub const ACCEPTED: &str = "accepted.json";
pub const REVIEW_QUEUE: &str = "review_queue.jsonl";
pub const FUSION_REPORT_JSON: &str = "fusion_report.json";
pub const FUSION_REPORT_TXT: &str = "fusion_report.txt";
pub const UNIFIED_PSEUDO: &str = "unified_pseudo.json";
pub const UNIFIED_REVIEWED: &str = "unified_reviewed.json";
pub const APPLY_REPORT: &str = "apply_report.json";
pub const EXPORT: &str = "unified_coco.json";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_TXT: &str = "eval_report.txt";
pub const BENCH_JSON: &str = "bench_report.json";
pub const BENCH_TXT: &str = "bench_report.txt";
pub const STORE_DIR: &str = "review_store";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Semantic(String),
}

impl PipelineError {
    /// 2 config, 3 parse, 4 semantic.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Parse(_) => 3,
            Self::Semantic(_) => 4,
        }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Model(m) => Self::Semantic(m.to_string()),
            other => Self::Parse(other.to_string()),
        }
    }
}

fn semantic(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Semantic(e.to_string())
}

impl From<UnifyError> for PipelineError {
    fn from(e: UnifyError) -> Self {
        match e {
            UnifyError::AliasSyntax { .. } => Self::Parse(e.to_string()),
            other => semantic(other),
        }
    }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        semantic(e)
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))
}

/// Reads an artifact written by an earlier stage; absence is a semantic error.
fn read_artifact<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| semantic(format!("{}: {e} (run `labelfuse {stage}` first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| semantic(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |e: std::io::Error| semantic(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn load_dataset(src: &DatasetSource) -> Result<(Dataset, ParseReport)> {
    match src.format {
        SourceFormat::Coco => Ok(parse_coco_dataset(&read_input(&src.path)?, &src.id)?),
        SourceFormat::Yolo => {
            let names = match &src.names {
                Some(n) => n.clone(),
                None => read_names(&src.path)?,
            };
            Ok(parse_yolo_dataset(&src.path, &names, &src.id)?)
        }
    }
}

pub fn load_aliases(cfg: &PipelineConfig) -> Result<AliasMap> {
    match &cfg.aliases {
        Some(p) => Ok(AliasMap::parse(&read_input(p)?)?),
        None => Ok(AliasMap::default()),
    }
}

/// Source datasets with the unified space and their remap tables.
pub struct Unified {
    pub datasets: Vec<Dataset>,
    pub reports: Vec<ParseReport>,
    pub space: LabelSpace,
    pub tables: Vec<RemapTable>,
}

pub fn unify(cfg: &PipelineConfig) -> Result<Unified> {
    if cfg.datasets.is_empty() {
        return Err(ConfigError::Invalid("no datasets configured".into()).into());
    }
    let (datasets, reports): (Vec<_>, Vec<_>) =
        cfg.datasets.iter().map(load_dataset).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let aliases = load_aliases(cfg)?;
    let spaces: Vec<(String, LabelSpace)> = datasets.iter().map(|d| (d.id.clone(), d.label_space.clone())).collect();
    let (space, tables) = build_unified_space(&spaces, &aliases)?;
    Ok(Unified { datasets, reports, space, tables })
}

fn remap_path(out: &Path, id: &str) -> PathBuf {
    out.join(REMAP_DIR).join(format!("{id}.json"))
}

pub fn cmd_unify(cfg: &PipelineConfig) -> Result<String> {
    let u = unify(cfg)?;
    let out = &cfg.output;
    write_json(&out.join(LABELSPACE), &u.space)?;
    for t in &u.tables {
        write_json(&remap_path(out, &t.dataset_id), t)?;
    }
    let mut summary = format!("unified label space: {} classes\n", u.space.len());
    for ((d, r), t) in u.datasets.iter().zip(&u.reports).zip(&u.tables) {
        summary += &format!(
            "  {}: {} images, {} annotations, {} classes -> {:?} (clamped {}, dropped {})\n",
            d.id,
            d.images.len(),
            d.annotations.len(),
            d.label_space.len(),
            t.mapping,
            r.clamped,
            r.dropped_out_of_frame + r.dropped_degenerate
        );
    }
    Ok(summary)
}

/// Loads the unify artifacts and checks they still match the inputs.
fn unified_from_artifacts(cfg: &PipelineConfig) -> Result<Unified> {
    let out = &cfg.output;
    let space: LabelSpace = read_artifact(&out.join(LABELSPACE), "unify")?;
    let tables: Vec<RemapTable> =
        cfg.datasets.iter().map(|d| read_artifact(&remap_path(out, &d.id), "unify")).collect::<Result<_>>()?;
    let fresh = unify(cfg)?;
    if fresh.space != space || fresh.tables != tables {
        return Err(semantic("unify artifacts are stale for the current inputs; rerun `labelfuse unify`"));
    }
    Ok(fresh)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FusionSummary {
    pub total: FusionReport,
    pub datasets: BTreeMap<String, FusionReport>,
}

/// Routes each detection of a source to the one target holding its image.
fn assign_detections(
    cfg: &PipelineConfig,
    remapped: &[Dataset],
    per_source: Vec<(usize, Vec<Detection>)>,
) -> Result<Vec<Vec<Detection>>> {
    let index: BTreeMap<&str, usize> = remapped.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let image_sets: Vec<BTreeSet<&str>> =
        remapped.iter().map(|d| d.images.iter().map(|i| i.id.as_str()).collect()).collect();
    let mut foreign = vec![Vec::new(); remapped.len()];
    for (src, dets) in per_source {
        let m = &cfg.detections[src];
        let targets: Vec<usize> = cfg.targets_of(m).iter().map(|t| index[t]).collect();
        for d in dets {
            let hits: Vec<usize> =
                targets.iter().copied().filter(|&t| image_sets[t].contains(d.image_id.as_str())).collect();
            match hits.as_slice() {
                [t] => foreign[*t].push(d),
                [] => {
                    return Err(semantic(format!(
                        "detections `{}`: image `{}` is not in any target dataset",
                        m.model_id, d.image_id
                    )))
                }
                _ => {
                    return Err(semantic(format!(
                        "detections `{}`: image id `{}` exists in several targets; set `runs_on`",
                        m.model_id, d.image_id
                    )))
                }
            }
        }
    }
    Ok(foreign)
}

pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<String> {
    let u = unified_from_artifacts(cfg)?;
    let index: BTreeMap<&str, usize> = cfg.datasets.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let remapped = u
        .datasets
        .iter()
        .zip(&u.tables)
        .map(|(d, t)| remap_dataset(d, t, &u.space))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut per_source = Vec::with_capacity(cfg.detections.len());
    for (i, m) in cfg.detections.iter().enumerate() {
        let s = index[m.space_of.as_str()];
        let source_space = &u.datasets[s].label_space;
        let raw = parse_detections(&read_input(&m.path)?, &m.model_id, source_space)?;
        per_source.push((i, remap_detections(&raw, &u.tables[s], source_space, &u.space)?));
    }
    let foreign = assign_detections(cfg, &remapped, per_source)?;

    let mut accepted: Vec<Annotation> = Vec::new();
    let mut review: Vec<ReviewItem> = Vec::new();
    let mut summary = FusionSummary { total: FusionReport::default(), datasets: BTreeMap::new() };
    for ((target, table), dets) in remapped.iter().zip(&u.tables).zip(&foreign) {
        let out =
            fuse_dataset_parallel(target, &table.native_classes(), dets, &cfg.fusion, cfg.threads).map_err(semantic)?;
        summary.total.merge(&out.report);
        summary.datasets.insert(target.id.clone(), out.report);
        accepted.extend(out.accepted);
        review.extend(out.review);
    }

    let images = remapped.iter().flat_map(|d| d.images.iter().cloned()).collect();
    let annotations =
        remapped.iter().flat_map(|d| d.annotations.iter().cloned()).chain(accepted.iter().cloned()).collect();
    let unified = UnifiedDataset::new(u.space.clone(), images, annotations).map_err(semantic)?;

    let out = &cfg.output;
    write_json(&out.join(ACCEPTED), &accepted)?;
    let queue: String =
        review.iter().map(|i| serde_json::to_string(i).expect("review item serializes") + "\n").collect();
    write_text(&out.join(REVIEW_QUEUE), &queue)?;
    write_json(&out.join(FUSION_REPORT_JSON), &summary)?;
    let text = fusion_text(&summary.total, &summary.datasets, &u.space);
    write_text(&out.join(FUSION_REPORT_TXT), &text)?;
    write_json(&out.join(UNIFIED_PSEUDO), &unified)?;
    Ok(text)
}

fn read_queue(path: &Path) -> Result<Vec<ReviewItem>> {
    let text = fs::read_to_string(path)
        .map_err(|e| semantic(format!("{}: {e} (run `labelfuse fuse` first)", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| semantic(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn store_dir(cfg: &PipelineConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.output.join(STORE_DIR), Path::to_path_buf)
}

/// Opens the review store, seeds it with the fuse stage's queue, and builds
/// the server state. Returns the state and how many items were new.
pub fn prepare_serve(cfg: &PipelineConfig, store_path: &Path) -> Result<(Arc<ServerState>, usize)> {
    let out = &cfg.output;
    let space: LabelSpace = read_artifact(&out.join(LABELSPACE), "unify")?;
    let unified: UnifiedDataset = read_artifact(&out.join(UNIFIED_PSEUDO), "fuse")?;
    let fusion: FusionSummary = read_artifact(&out.join(FUSION_REPORT_JSON), "fuse")?;
    let queue = read_queue(&out.join(REVIEW_QUEUE))?;
    let store = ReviewStore::open(store_path, space)?;
    let (added, _) = store.enqueue(queue)?;
    let roots = cfg.datasets.iter().map(|d| (d.id.clone(), d.image_root())).collect();
    let state = ServerState::new(Arc::new(store), unified.images, roots, fusion.total);
    Ok((Arc::new(state), added))
}

pub fn cmd_apply(cfg: &PipelineConfig, store_path: &Path) -> Result<(ApplyReport, String)> {
    let out = &cfg.output;
    let base: UnifiedDataset = read_artifact(&out.join(UNIFIED_PSEUDO), "fuse")?;
    let state = store::load_state(store_path)?;
    let (reviewed, report) = apply_decisions(&base, state.items.values()).map_err(semantic)?;
    write_json(&out.join(UNIFIED_REVIEWED), &reviewed)?;
    write_json(&out.join(APPLY_REPORT), &report)?;
    let text = format!(
        "verified added {}, already present {}, rejected {}, pending {}\n{}\n",
        report.added,
        report.already_present,
        report.rejected,
        report.pending,
        reviewed.to_string_summary()
    );
    Ok((report, text))
}

pub fn cmd_export(cfg: &PipelineConfig) -> Result<String> {
    let out = &cfg.output;
    let reviewed = out.join(UNIFIED_REVIEWED);
    let u: UnifiedDataset = if reviewed.exists() {
        read_artifact(&reviewed, "apply")?
    } else {
        read_artifact(&out.join(UNIFIED_PSEUDO), "fuse")?
    };
    let text = export_coco(&u);
    let (back, _) = parse_coco_unified(&text).map_err(|e| semantic(format!("export self-check failed: {e}")))?;
    if back != u {
        return Err(semantic("export self-check failed: parsed document differs from the dataset"));
    }
    write_text(&out.join(EXPORT), &text)?;
    Ok(format!("{}\n", u.to_string_summary()))
}

pub struct EvalArgs<'a> {
    pub gt: &'a Path,
    pub gt_format: SourceFormat,
    pub names: Option<Vec<String>>,
    pub detections: &'a Path,
    pub score_threshold: f64,
    pub output: &'a Path,
}

pub fn cmd_eval(args: &EvalArgs<'_>) -> Result<(MetricsReport, String)> {
    let src = DatasetSource {
        id: "gt".into(),
        format: args.gt_format,
        path: args.gt.to_path_buf(),
        names: args.names.clone(),
        images: None,
    };
    let (gt, _) = load_dataset(&src)?;
    let dets = parse_detections(&read_input(args.detections)?, "eval", &gt.label_space)?;
    let report = evaluate(&gt, &dets, args.score_threshold).map_err(semantic)?;
    let text = metrics_table(&report);
    write_json(&args.output.join(EVAL_JSON), &report)?;
    write_text(&args.output.join(EVAL_TXT), &text)?;
    Ok((report, text))
}

pub fn cmd_bench(params: &BenchmarkParams, output: &Path) -> Result<(BenchmarkReport, String)> {
    let report = run_benchmark(params).map_err(semantic)?;
    let text = bench_table(&report);
    write_json(&output.join(BENCH_JSON), &report)?;
    write_text(&output.join(BENCH_TXT), &text)?;
    Ok((report, text))
}
