//! Seeded synthetic scenarios: partially labelled datasets over a shared
//! hidden truth, simulated detectors, and the end-to-end pseudo-labelling
//! benchmark that compares single detectors, fusion, and fusion plus an
//! oracle reviewer.
//!
//! Randomness is split per image: every image draws from
//! `ChaCha8(seed)` on stream `image_index`, so generating images in any order
//! or in parallel yields the same values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuse::{fuse_dataset, iou, FuseError, FusionConfig};
use crate::metrics::{evaluate, MetricsError};
use crate::model::{
    clamp_box, Annotation, BoundingBox, Dataset, Detection, ImageRecord, LabelSpace, ModelError, Provenance,
    UnifiedDataset,
};
use crate::review::{apply_decisions, ReviewItem, ReviewStatus};
use crate::unify::{build_unified_space, remap_dataset, remap_detections, AliasMap, UnifyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Unify(#[from] UnifyError),
    #[error(transparent)]
    Fuse(#[from] FuseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub seed: u64,
    pub n_datasets: usize,
    pub classes_per_dataset: usize,
    /// Classes shared by neighbouring datasets.
    pub overlap_classes: usize,
    /// Total images, assigned to datasets round-robin.
    pub images: usize,
    pub boxes_per_image: usize,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            seed: 7,
            n_datasets: 3,
            classes_per_dataset: 4,
            overlap_classes: 2,
            images: 200,
            boxes_per_image: 4,
            image_width: 640,
            image_height: 480,
        }
    }
}

impl WorldParams {
    /// Class indices of each dataset.
    ///
    /// One dataset owns `k` classes. Two datasets form a chain sharing
    /// `overlap` classes. Three or more form a ring where each dataset shares
    /// `overlap` classes with its successor, giving `n * (k - overlap)`
    /// distinct classes.
    pub fn class_layout(&self) -> Result<(usize, Vec<Vec<usize>>), BenchError> {
        let (n, k, o) = (self.n_datasets, self.classes_per_dataset, self.overlap_classes);
        let invalid = |m: &str| Err(BenchError::InvalidParams(m.into()));
        if n == 0 || k == 0 {
            return invalid("need at least one dataset and one class per dataset");
        }
        if o > k {
            return invalid("overlap_classes must not exceed classes_per_dataset");
        }
        let stride = k - o;
        let total = match n {
            1 => k,
            _ if stride == 0 => k,
            2 => 2 * k - o,
            _ => n * stride,
        };
        if total < k {
            return invalid("ring too small: classes_per_dataset exceeds the number of distinct classes");
        }
        let layout = (0..n).map(|i| (0..k).map(|j| (i * stride + j) % total).collect()).collect();
        Ok((total, layout))
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.image_width < 32 || self.image_height < 32 {
            return Err(BenchError::InvalidParams("images must be at least 32x32".into()));
        }
        self.class_layout().map(|_| ())
    }
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

fn dataset_id(i: usize) -> String {
    format!("d{i}")
}

fn image_rng(seed: u64, image_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image_index as u64);
    rng
}

/// Derives an independent seed for detector `i` of a scenario.
pub fn detector_seed(seed: u64, i: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)
}

fn random_box(rng: &mut ChaCha8Rng, width: u32, height: u32) -> BoundingBox {
    let (fw, fh) = (f64::from(width), f64::from(height));
    let w = fw * rng.random_range(0.05..0.25);
    let h = fh * rng.random_range(0.05..0.25);
    let x = rng.random::<f64>() * (fw - w);
    let y = rng.random::<f64>() * (fh - h);
    BoundingBox { x, y, w, h }
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    iou(a, b) > 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// Every box of every class, over the unified space.
    pub truth: UnifiedDataset,
    /// Per-dataset views holding ground truth only for their own classes.
    pub visible: Vec<Dataset>,
}

pub fn generate_world(p: &WorldParams) -> Result<World, BenchError> {
    p.validate()?;
    let (total, layout) = p.class_layout()?;
    let unified = LabelSpace::from_names((0..total).map(class_name))?;

    let mut images = Vec::with_capacity(p.images);
    let mut truth_anns = Vec::new();
    for j in 0..p.images {
        let ds = dataset_id(j % p.n_datasets);
        let id = format!("{ds}-img{j:05}");
        let img = ImageRecord::new(id.clone(), ds, format!("{id}.png"), p.image_width, p.image_height)?;
        let mut rng = image_rng(p.seed, j);
        let mut placed: Vec<(usize, BoundingBox)> = Vec::new();
        for _ in 0..p.boxes_per_image {
            let class = rng.random_range(0..total);
            // same-class boxes never overlap; give up on this box after 50 tries
            for _ in 0..50 {
                let b = random_box(&mut rng, p.image_width, p.image_height);
                if !placed.iter().any(|(c, o)| *c == class && overlaps(o, &b)) {
                    placed.push((class, b));
                    break;
                }
            }
        }
        for (class, b) in placed {
            truth_anns.push(Annotation::new(&img, class as u32, b, Provenance::GroundTruth, &unified)?);
        }
        images.push(img);
    }
    let truth = UnifiedDataset::new(unified, images, truth_anns)?;

    let visible = layout
        .iter()
        .enumerate()
        .map(|(i, classes)| {
            let ds = dataset_id(i);
            let space = LabelSpace::from_names(classes.iter().map(|&c| class_name(c)))?;
            let local: BTreeMap<u32, u32> = classes.iter().enumerate().map(|(l, &c)| (c as u32, l as u32)).collect();
            let imgs: Vec<ImageRecord> = truth.images.iter().filter(|im| im.source_dataset == ds).cloned().collect();
            let anns = truth
                .annotations
                .iter()
                .filter(|a| a.image.dataset == ds)
                .filter_map(|a| local.get(&a.category_id).map(|&l| Annotation { category_id: l, ..a.clone() }))
                .collect();
            Ok(Dataset::new(ds, space, imgs, anns)?)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(World { truth, visible })
}

/// Uniform score range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        (self.lo + (self.hi - self.lo) * rng.random::<f64>()).clamp(0.0, 1.0)
    }

    fn valid(&self) -> bool {
        0.0 <= self.lo && self.lo <= self.hi && self.hi <= 1.0
    }
}

/// How a simulated detector deviates from the truth.
///
/// Each true box is dropped with probability `drop_rate`; kept boxes get
/// Gaussian jitter with standard deviation `jitter_sigma` times the box size
/// on each of x, y, w, h and a score uniform in `tp_score`. Each image also
/// gets Poisson(`fp_rate`) random false positives scored uniformly in
/// `fp_score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoiseModel {
    pub jitter_sigma: f64,
    pub drop_rate: f64,
    pub fp_rate: f64,
    pub tp_score: ScoreRange,
    pub fp_score: ScoreRange,
}

impl Default for DetectorNoiseModel {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.08,
            drop_rate: 0.2,
            fp_rate: 0.5,
            tp_score: ScoreRange { lo: 0.6, hi: 1.0 },
            fp_score: ScoreRange { lo: 0.05, hi: 0.5 },
        }
    }
}

impl DetectorNoiseModel {
    /// Reproduces the truth exactly, with score 1.0.
    pub fn perfect() -> Self {
        Self {
            jitter_sigma: 0.0,
            drop_rate: 0.0,
            fp_rate: 0.0,
            tp_score: ScoreRange { lo: 1.0, hi: 1.0 },
            fp_score: ScoreRange { lo: 0.05, hi: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let ok = self.jitter_sigma >= 0.0
            && self.jitter_sigma.is_finite()
            && (0.0..1.0).contains(&self.drop_rate)
            && self.fp_rate >= 0.0
            && self.fp_rate.is_finite()
            && self.tp_score.valid()
            && self.fp_score.valid();
        if ok {
            Ok(())
        } else {
            Err(BenchError::InvalidParams(format!("invalid noise model {self:?}")))
        }
    }
}

/// Simulates a detector that knows `model_space` (matched to the truth by
/// class name). Detections use the model's own category ids.
pub fn simulate_detector(
    truth: &UnifiedDataset,
    noise: &DetectorNoiseModel,
    model_space: &LabelSpace,
    model_id: &str,
    seed: u64,
) -> Result<Vec<Detection>, BenchError> {
    noise.validate()?;
    let to_model: BTreeMap<u32, u32> = truth
        .label_space
        .categories()
        .iter()
        .filter_map(|c| model_space.find(&c.canonical_name).map(|m| (c.id, m)))
        .collect();
    let mut by_image: BTreeMap<(&str, &str), Vec<&Annotation>> = BTreeMap::new();
    for a in &truth.annotations {
        by_image.entry((a.image.dataset.as_str(), a.image.id.as_str())).or_default().push(a);
    }
    let fp_dist = if noise.fp_rate > 0.0 {
        Some(Poisson::new(noise.fp_rate).map_err(|e| BenchError::InvalidParams(format!("{e}")))?)
    } else {
        None
    };

    let mut out = Vec::new();
    for (j, img) in truth.images.iter().enumerate() {
        let mut rng = image_rng(seed, j);
        let anns = by_image.get(&(img.source_dataset.as_str(), img.id.as_str()));
        for a in anns.into_iter().flatten() {
            let Some(&class) = to_model.get(&a.category_id) else { continue };
            if rng.random::<f64>() < noise.drop_rate {
                continue;
            }
            let b = a.bbox;
            let s = noise.jitter_sigma;
            let mut jitter = |scale: f64| -> f64 {
                let z: f64 = StandardNormal.sample(&mut rng);
                s * scale * z
            };
            let (dx, dy, dw, dh) = (jitter(b.w), jitter(b.h), jitter(b.w), jitter(b.h));
            let raw = BoundingBox::new(b.x + dx, b.y + dy, (b.w + dw).max(0.1 * b.w), (b.h + dh).max(0.1 * b.h))?;
            let score = noise.tp_score.sample(&mut rng);
            if let Ok(bbox) = clamp_box(&raw, img) {
                out.push(Detection::new(img.id.clone(), class, bbox, score, model_id)?);
            }
        }
        if let (Some(dist), false) = (&fp_dist, model_space.is_empty()) {
            let count = dist.sample(&mut rng) as usize;
            for _ in 0..count {
                let class = rng.random_range(0..model_space.len()) as u32;
                let bbox = random_box(&mut rng, img.width, img.height);
                let score = noise.fp_score.sample(&mut rng);
                out.push(Detection::new(img.id.clone(), class, bbox, score, model_id)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reviewer {
    #[default]
    None,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkParams {
    pub world: WorldParams,
    pub noise: DetectorNoiseModel,
    pub fusion: FusionConfig,
    pub reviewer: Reviewer,
    /// Detectors used as pseudo-label sources; `None` means all of them.
    pub sources: Option<Vec<usize>>,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            world: WorldParams::default(),
            noise: DetectorNoiseModel::default(),
            fusion: FusionConfig::default(),
            reviewer: Reviewer::Oracle,
            sources: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSourceScore {
    pub model_id: String,
    /// `None` when the detector covers no unlabelled (dataset, class) cell.
    pub map50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub classes: usize,
    pub images: usize,
    pub gap_boxes: usize,
    /// (a) each detector's accepted pseudo labels on the cells it can fill.
    pub single: Vec<SingleSourceScore>,
    /// (b) fused accepted pseudo labels.
    pub fused_map50: f64,
    /// (c) fused labels plus review items the oracle accepted.
    pub reviewed_map50: Option<f64>,
    pub accepted: usize,
    pub needs_review: usize,
    pub oracle_accepted: usize,
}

impl BenchmarkReport {
    pub fn best_single(&self) -> Option<f64> {
        self.single.iter().filter_map(|s| s.map50).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

struct Scenario {
    world: World,
    unified: LabelSpace,
    remapped: Vec<Dataset>,
    natives: Vec<BTreeSet<u32>>,
    detections: Vec<Vec<Detection>>,
}

fn model_id(i: usize) -> String {
    format!("m{i}")
}

fn build_scenario(p: &BenchmarkParams) -> Result<Scenario, BenchError> {
    p.fusion.validate()?;
    let world = generate_world(&p.world)?;
    let spaces: Vec<(String, LabelSpace)> =
        world.visible.iter().map(|d| (d.id.clone(), d.label_space.clone())).collect();
    let (unified, tables) = build_unified_space(&spaces, &AliasMap::default())?;
    let mut remapped = Vec::new();
    let mut natives = Vec::new();
    let mut detections = Vec::new();
    for (i, (d, t)) in world.visible.iter().zip(&tables).enumerate() {
        remapped.push(remap_dataset(d, t, &unified)?);
        natives.push(t.native_classes());
        let raw =
            simulate_detector(&world.truth, &p.noise, &d.label_space, &model_id(i), detector_seed(p.world.seed, i))?;
        detections.push(remap_detections(&raw, t, &d.label_space, &unified)?);
    }
    Ok(Scenario { world, unified, remapped, natives, detections })
}

struct FusionRun {
    accepted: Vec<Annotation>,
    review: Vec<ReviewItem>,
}

fn run_fusion(s: &Scenario, sources: &[usize], cfg: &FusionConfig) -> Result<FusionRun, BenchError> {
    let mut run = FusionRun { accepted: Vec::new(), review: Vec::new() };
    for (j, target) in s.remapped.iter().enumerate() {
        let image_ids: BTreeSet<&str> = target.images.iter().map(|i| i.id.as_str()).collect();
        let foreign: Vec<Detection> = sources
            .iter()
            .filter(|&&i| i != j)
            .flat_map(|&i| s.detections[i].iter())
            .filter(|d| image_ids.contains(d.image_id.as_str()))
            .cloned()
            .collect();
        let out = fuse_dataset(target, &s.natives[j], &foreign, cfg)?;
        run.accepted.extend(out.accepted);
        run.review.extend(out.review);
    }
    Ok(run)
}

/// Unlabelled cells `(dataset index, unified class)` that `sources` can fill.
fn gap_cells(s: &Scenario, sources: &[usize]) -> BTreeSet<(usize, u32)> {
    let mut cells = BTreeSet::new();
    for j in 0..s.remapped.len() {
        for c in 0..s.unified.len() as u32 {
            let fillable = sources.iter().any(|&i| i != j && s.natives[i].contains(&c));
            if !s.natives[j].contains(&c) && fillable {
                cells.insert((j, c));
            }
        }
    }
    cells
}

fn dataset_index(id: &str) -> usize {
    id.trim_start_matches('d').parse().unwrap_or(usize::MAX)
}

/// mAP50 of `labels` against the hidden truth restricted to `cells`.
fn gap_map50(s: &Scenario, cells: &BTreeSet<(usize, u32)>, labels: &[Annotation]) -> Result<Option<f64>, BenchError> {
    if cells.is_empty() {
        return Ok(None);
    }
    let in_gap = |a: &Annotation| cells.contains(&(dataset_index(&a.image.dataset), a.category_id));
    let truth = &s.world.truth;
    let gap_truth = Dataset::new(
        "gap",
        truth.label_space.clone(),
        truth.images.clone(),
        truth.annotations.iter().filter(|a| in_gap(a)).cloned().collect(),
    )?;
    let preds = labels
        .iter()
        .filter(|a| in_gap(a))
        .map(|a| Detection::new(a.image.id.clone(), a.category_id, a.bbox, a.provenance.confidence(), "labels"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(evaluate(&gap_truth, &preds, 0.5)?.all.ap50))
}

/// Truth box of the same class on the same image with IoU ≥ 0.5, if any.
fn truth_match<'a>(truth: &'a UnifiedDataset, a: &Annotation) -> Option<&'a Annotation> {
    truth
        .annotations
        .iter()
        .filter(|t| t.image == a.image && t.category_id == a.category_id)
        .map(|t| (t, iou(&t.bbox, &a.bbox)))
        .filter(|(_, v)| *v >= 0.5)
        .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(Ordering::Equal))
        .map(|(t, _)| t)
}

/// A reviewer with access to the hidden truth. It accepts an item iff its
/// class is right, it overlaps a truth box with IoU ≥ 0.5, and no accepted
/// label already covers that box. Items are visited by confidence descending.
pub fn oracle_review(truth: &UnifiedDataset, accepted: &[Annotation], review: &[ReviewItem]) -> Vec<ReviewItem> {
    let mut covered: BTreeSet<crate::model::AnnotationKey> =
        accepted.iter().filter_map(|a| truth_match(truth, a)).map(Annotation::key).collect();
    let mut order: Vec<&ReviewItem> = review.iter().collect();
    order.sort_by(|a, b| {
        let (ca, cb) = (a.candidate.provenance.confidence(), b.candidate.provenance.confidence());
        cb.partial_cmp(&ca).unwrap_or(Ordering::Equal).then_with(|| a.item_id.cmp(&b.item_id))
    });
    order
        .into_iter()
        .map(|item| {
            let hit = truth_match(truth, &item.candidate).filter(|t| covered.insert(t.key()));
            let mut decided = item.clone();
            decided.status = if hit.is_some() { ReviewStatus::Accepted } else { ReviewStatus::Rejected };
            decided.decided_by = Some("oracle".into());
            decided.decided_at = Some(0);
            decided
        })
        .collect()
}

pub fn run_benchmark(p: &BenchmarkParams) -> Result<BenchmarkReport, BenchError> {
    let s = build_scenario(p)?;
    let n = s.remapped.len();
    let sources: Vec<usize> = match &p.sources {
        Some(v) => {
            if v.iter().any(|&i| i >= n) {
                return Err(BenchError::InvalidParams("source index out of range".into()));
            }
            v.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
        }
        None => (0..n).collect(),
    };

    let single = (0..n)
        .map(|i| {
            let cells = gap_cells(&s, &[i]);
            let run = run_fusion(&s, &[i], &p.fusion)?;
            Ok(SingleSourceScore { model_id: model_id(i), map50: gap_map50(&s, &cells, &run.accepted)? })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let cells = gap_cells(&s, &sources);
    let fused = run_fusion(&s, &sources, &p.fusion)?;
    let fused_map50 = gap_map50(&s, &cells, &fused.accepted)?.unwrap_or(0.0);

    let (reviewed_map50, oracle_accepted) = match p.reviewer {
        Reviewer::None => (None, 0),
        Reviewer::Oracle => {
            let decided = oracle_review(&s.world.truth, &fused.accepted, &fused.review);
            let base = UnifiedDataset::new(s.unified.clone(), s.world.truth.images.clone(), fused.accepted.clone())?;
            let (with_review, report) = apply_decisions(&base, decided.iter())?;
            (Some(gap_map50(&s, &cells, &with_review.annotations)?.unwrap_or(0.0)), report.added)
        }
    };

    let gap_boxes = s
        .world
        .truth
        .annotations
        .iter()
        .filter(|a| cells.contains(&(dataset_index(&a.image.dataset), a.category_id)))
        .count();
    Ok(BenchmarkReport {
        classes: s.unified.len(),
        images: s.world.truth.images.len(),
        gap_boxes,
        single,
        fused_map50,
        reviewed_map50,
        accepted: fused.accepted.len(),
        needs_review: fused.review.len(),
        oracle_accepted,
    })
}
