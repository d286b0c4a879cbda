//! Pseudo-label fusion.
//!
//! Detections from foreign models are grouped per image and class, clustered
//! greedily by IoU against cluster seeds, fused into one box per cluster and
//! routed by confidence into accept / review / discard.
//!
//! The per-image step ([`fuse_image`]) is pure, so callers may run it
//! concurrently over the jobs returned by [`plan_jobs`] and merge with
//! [`assemble`]; the result is identical to the serial [`fuse_dataset`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    by_score_desc, clamp_box, Annotation, BoundingBox, Dataset, Detection, ImageRecord, ModelError, Provenance,
    PseudoLabel,
};
use crate::review::ReviewItem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuseError {
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("detection references image `{0}` which is not in the target dataset")]
    UnknownImage(String),
    #[error("detection category {0} is outside the unified space")]
    UnknownCategory(u32),
    #[error("cannot fuse an empty cluster")]
    EmptyCluster,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    WeightedAverage,
    HighestScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub tau_accept: f64,
    pub tau_discard: f64,
    pub sigma_cluster: f64,
    pub strategy: FusionStrategy,
    pub suppress_gt_classes: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau_accept: 0.7,
            tau_discard: 0.05,
            sigma_cluster: 0.55,
            strategy: FusionStrategy::WeightedAverage,
            suppress_gt_classes: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FuseError> {
        let ok_thresholds = 0.0 <= self.tau_discard && self.tau_discard < self.tau_accept && self.tau_accept <= 1.0;
        if !ok_thresholds {
            return Err(FuseError::InvalidConfig(format!(
                "need 0 <= tau_discard < tau_accept <= 1 (got {} / {})",
                self.tau_discard, self.tau_accept
            )));
        }
        if !(0.0 < self.sigma_cluster && self.sigma_cluster < 1.0) {
            return Err(FuseError::InvalidConfig(format!(
                "sigma_cluster must be in (0, 1) (got {})",
                self.sigma_cluster
            )));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2().min(b.x2()) - a.x.max(b.x);
    let ih = a.y2().min(b.y2()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy seed clustering of detections that share image and class.
///
/// Detections are visited by score descending (ties: `model_id`, then input
/// order). Each joins the first cluster whose seed overlaps it with
/// IoU ≥ `sigma`, otherwise it seeds a new cluster. Members of each cluster
/// are in visiting order, so the seed is always first.
pub fn cluster_detections(dets: &[Detection], sigma: f64) -> Vec<Vec<&Detection>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        by_score_desc(dets[a].score, dets[b].score)
            .then_with(|| dets[a].model_id.cmp(&dets[b].model_id))
            .then(a.cmp(&b))
    });
    let mut clusters: Vec<Vec<&Detection>> = Vec::new();
    for i in order {
        let d = &dets[i];
        match clusters.iter_mut().find(|c| iou(&c[0].bbox, &d.bbox) >= sigma) {
            Some(c) => c.push(d),
            None => clusters.push(alloc::vec![d]),
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedBox {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub models: BTreeSet<String>,
}

impl FusedBox {
    /// Contributing model ids joined with `+`.
    pub fn model_tag(&self) -> String {
        self.models.iter().map(String::as_str).collect::<Vec<_>>().join("+")
    }
}

/// Fuses a non-empty cluster whose first member is its top scorer.
pub fn fuse_cluster(cluster: &[&Detection], strategy: FusionStrategy) -> Result<FusedBox, FuseError> {
    let top = cluster.first().ok_or(FuseError::EmptyCluster)?;
    let models = cluster.iter().map(|d| d.model_id.clone()).collect();
    let n = cluster.len() as f64;
    let (bbox, confidence) = match strategy {
        FusionStrategy::HighestScore => {
            let best = cluster.iter().copied().min_by(|a, b| by_score_desc(a.score, b.score)).unwrap_or(top);
            (best.bbox, best.score)
        }
        FusionStrategy::WeightedAverage => {
            let total: f64 = cluster.iter().map(|d| d.score).sum();
            // all-zero scores fall back to a plain mean
            let weight = |d: &Detection| if total > 0.0 { d.score } else { 1.0 };
            let norm = if total > 0.0 { total } else { n };
            let coord = |f: fn(&BoundingBox) -> f64| {
                let mean = cluster.iter().map(|d| weight(d) * f(&d.bbox)).sum::<f64>() / norm;
                let lo = cluster.iter().map(|d| f(&d.bbox)).fold(f64::INFINITY, f64::min);
                let hi = cluster.iter().map(|d| f(&d.bbox)).fold(f64::NEG_INFINITY, f64::max);
                mean.clamp(lo, hi)
            };
            let bbox = BoundingBox::new(coord(|b| b.x), coord(|b| b.y), coord(|b| b.w), coord(|b| b.h))?;
            let confidence = (cluster.iter().map(|d| d.score).sum::<f64>() / n).min(1.0);
            (bbox, confidence)
        }
    };
    Ok(FusedBox { bbox, confidence, models })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Accepted,
    NeedsReview,
    Discarded,
    SuppressedByGt,
}

/// Routing rule, evaluated in order: discard floor, GT suppression, accept
/// threshold, review.
pub fn route_candidate(confidence: f64, category_id: u32, cfg: &FusionConfig, native: &BTreeSet<u32>) -> Route {
    if confidence < cfg.tau_discard {
        Route::Discarded
    } else if cfg.suppress_gt_classes && native.contains(&category_id) {
        Route::SuppressedByGt
    } else if confidence >= cfg.tau_accept {
        Route::Accepted
    } else {
        Route::NeedsReview
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedCandidate {
    pub candidate: Annotation,
    pub route: Route,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteCounts {
    pub accepted: usize,
    pub needs_review: usize,
    pub discarded: usize,
    pub suppressed_by_gt: usize,
}

impl RouteCounts {
    fn bump(&mut self, route: Route) {
        match route {
            Route::Accepted => self.accepted += 1,
            Route::NeedsReview => self.needs_review += 1,
            Route::Discarded => self.discarded += 1,
            Route::SuppressedByGt => self.suppressed_by_gt += 1,
        }
    }

    fn add(&mut self, other: &RouteCounts) {
        self.accepted += other.accepted;
        self.needs_review += other.needs_review;
        self.discarded += other.discarded;
        self.suppressed_by_gt += other.suppressed_by_gt;
    }

    pub fn total(&self) -> usize {
        self.accepted + self.needs_review + self.discarded + self.suppressed_by_gt
    }
}

/// Counts produced by one fusion run. `clusters` always equals
/// `routes.total()`, and `detections = clustered + out_of_frame`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionReport {
    pub detections: usize,
    pub out_of_frame: usize,
    pub clustered: usize,
    pub clusters: usize,
    pub routes: RouteCounts,
    pub per_class: BTreeMap<u32, RouteCounts>,
}

impl FusionReport {
    pub fn merge(&mut self, other: &FusionReport) {
        self.detections += other.detections;
        self.out_of_frame += other.out_of_frame;
        self.clustered += other.clustered;
        self.clusters += other.clusters;
        self.routes.add(&other.routes);
        for (class, counts) in &other.per_class {
            self.per_class.entry(*class).or_default().add(counts);
        }
    }
}

/// Fusion work for one image.
#[derive(Debug, Clone)]
pub struct FusionJob<'a> {
    pub image: &'a ImageRecord,
    pub detections: Vec<&'a Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFusion {
    pub image: ImageRecord,
    pub candidates: Vec<RoutedCandidate>,
    pub report: FusionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub accepted: Vec<Annotation>,
    pub review: Vec<ReviewItem>,
    pub report: FusionReport,
}

/// Groups detections by image, in ascending image-id order. Detections keep
/// their input order within an image.
pub fn plan_jobs<'a>(target: &'a Dataset, dets: &'a [Detection]) -> Result<Vec<FusionJob<'a>>, FuseError> {
    let by_id: BTreeMap<&str, &ImageRecord> = target.images.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut grouped: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        if !by_id.contains_key(d.image_id.as_str()) {
            return Err(FuseError::UnknownImage(d.image_id.clone()));
        }
        if !target.label_space.contains(d.category_id) {
            return Err(FuseError::UnknownCategory(d.category_id));
        }
        grouped.entry(d.image_id.as_str()).or_default().push(d);
    }
    Ok(grouped.into_iter().map(|(id, detections)| FusionJob { image: by_id[id], detections }).collect())
}

/// Clusters, fuses and routes the detections of one image.
pub fn fuse_image(job: &FusionJob<'_>, native: &BTreeSet<u32>, cfg: &FusionConfig) -> Result<ImageFusion, FuseError> {
    let image = job.image;
    let mut report = FusionReport { detections: job.detections.len(), ..Default::default() };
    let mut by_class: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in &job.detections {
        match clamp_box(&d.bbox, image) {
            Ok(bbox) => {
                let mut d = (*d).clone();
                d.bbox = bbox;
                by_class.entry(d.category_id).or_default().push(d);
                report.clustered += 1;
            }
            Err(ModelError::DegenerateBox) => report.out_of_frame += 1,
            Err(e) => return Err(e.into()),
        }
    }

    let mut candidates = Vec::new();
    for (class, dets) in &by_class {
        for cluster in cluster_detections(dets, cfg.sigma_cluster) {
            let fused = fuse_cluster(&cluster, cfg.strategy)?;
            let bbox = clamp_box(&fused.bbox, image)?;
            let route = route_candidate(fused.confidence, *class, cfg, native);
            let provenance = Provenance::Pseudo(PseudoLabel::new(fused.model_tag(), fused.confidence)?);
            let candidate = Annotation { image: image.key(), category_id: *class, bbox, provenance };
            report.clusters += 1;
            report.routes.bump(route);
            report.per_class.entry(*class).or_default().bump(route);
            candidates.push(RoutedCandidate { candidate, route });
        }
    }
    Ok(ImageFusion { image: image.clone(), candidates, report })
}

/// Merges per-image results (in job order) and numbers review items
/// `<target_id>-<seq>`.
pub fn assemble(target_id: &str, results: Vec<ImageFusion>) -> FusionOutput {
    let mut out = FusionOutput { accepted: Vec::new(), review: Vec::new(), report: FusionReport::default() };
    for r in results {
        out.report.merge(&r.report);
        for c in r.candidates {
            match c.route {
                Route::Accepted => out.accepted.push(c.candidate),
                Route::NeedsReview => {
                    let id = format!("{}-{:08}", target_id, out.review.len());
                    out.review.push(ReviewItem::pending(id, c.candidate, r.image.width, r.image.height));
                }
                Route::Discarded | Route::SuppressedByGt => {}
            }
        }
    }
    out
}

/// Pseudo-labels one target dataset (already in the unified space) from
/// foreign detections. `native` holds the unified ids the target annotates
/// itself.
pub fn fuse_dataset(
    target: &Dataset,
    native: &BTreeSet<u32>,
    foreign: &[Detection],
    cfg: &FusionConfig,
) -> Result<FusionOutput, FuseError> {
    cfg.validate()?;
    let results =
        plan_jobs(target, foreign)?.iter().map(|job| fuse_image(job, native, cfg)).collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&target.id, results))
}
