//! COCO-style detection metrics.
//!
//! Matching is greedy per image and class: detections in descending score
//! order (ties keep input order) each take the unmatched ground-truth box with
//! the highest IoU at or above the threshold (ties: lowest index). AP uses the
//! 101-point interpolated precision envelope. AP50-95 averages AP over IoU
//! thresholds 0.50, 0.55, ..., 0.95.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuse::iou;
use crate::model::{by_score_desc, BoundingBox, Dataset, Detection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("class has no ground-truth instances")]
    ZeroGt,
    #[error("ground-truth dataset has no images")]
    EmptyDataset,
    #[error("detection references unknown image `{0}`")]
    UnknownImage(String),
    #[error("image id `{0}` is used by more than one source dataset")]
    AmbiguousImage(String),
    #[error("detection category {0} is not in the ground-truth label space")]
    UnknownCategory(u32),
}

/// IoU thresholds 0.50..=0.95 in steps of 0.05.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMatch {
    /// Index into the input detections.
    pub index: usize,
    pub score: f64,
    pub matched_gt: Option<usize>,
}

impl DetectionMatch {
    pub fn is_tp(&self) -> bool {
        self.matched_gt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// In matching order (score descending).
    pub detections: Vec<DetectionMatch>,
    pub gt_covered: Vec<bool>,
}

/// Greedy matching for one image and one class. `dets` are `(score, box)`.
pub fn match_detections(gt: &[BoundingBox], dets: &[(f64, BoundingBox)], iou_thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(dets[a].0, dets[b].0));
    let mut gt_covered = vec![false; gt.len()];
    let detections = order
        .into_iter()
        .map(|index| {
            let (score, bbox) = dets[index];
            let mut best: Option<(usize, f64)> = None;
            for (g, gbox) in gt.iter().enumerate() {
                if gt_covered[g] {
                    continue;
                }
                let v = iou(&bbox, gbox);
                if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                gt_covered[g] = true;
            }
            DetectionMatch { index, score, matched_gt: best.map(|(g, _)| g) }
        })
        .collect();
    MatchResult { detections, gt_covered }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall after each detection, sweeping `(score, is_tp)` by score
/// descending (stable for ties).
pub fn pr_curve(matches: &[(f64, bool)], total_gt: usize) -> Result<Vec<PrPoint>, MetricsError> {
    if total_gt == 0 {
        return Err(MetricsError::ZeroGt);
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| by_score_desc(a.0, b.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(sorted
        .into_iter()
        .map(|(_, is_tp)| {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint { recall: tp as f64 / total_gt as f64, precision: tp as f64 / (tp + fp) as f64 }
        })
        .collect())
}

/// 101-point interpolated average precision.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    // monotone envelope: best precision at this or any later point
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for r in 0..=100 {
        let threshold = f64::from(r) / 100.0;
        while cursor < points.len() && points[cursor].recall < threshold {
            cursor += 1;
        }
        if cursor < points.len() {
            sum += envelope[cursor];
        }
    }
    sum / 101.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub category_id: u32,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub ap50_95: f64,
    pub gt_count: usize,
    pub det_count: usize,
}

impl ClassMetrics {
    /// Classes without ground truth are excluded from the aggregate row.
    pub fn has_gt(&self) -> bool {
        self.gt_count > 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub score_threshold: f64,
    /// Unweighted mean over classes with at least one ground-truth box.
    pub all: SummaryRow,
    pub classes: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Names of classes left out of the aggregate row.
    pub fn classes_without_gt(&self) -> Vec<&str> {
        self.classes.iter().filter(|c| !c.has_gt()).map(|c| c.name.as_str()).collect()
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Evaluates `dets` against every annotation in `gt` (provenance ignored).
///
/// Precision, recall and F1 are taken at IoU 0.5 counting detections with
/// score ≥ `score_thr_f1`.
pub fn evaluate(gt: &Dataset, dets: &[Detection], score_thr_f1: f64) -> Result<MetricsReport, MetricsError> {
    if gt.images.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut image_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, img) in gt.images.iter().enumerate() {
        if image_index.insert(img.id.as_str(), i).is_some() {
            return Err(MetricsError::AmbiguousImage(img.id.clone()));
        }
    }
    let n_classes = gt.label_space.len();
    let n_images = gt.images.len();
    // [class][image] -> boxes
    let mut gt_cells: Vec<Vec<Vec<BoundingBox>>> = vec![vec![Vec::new(); n_images]; n_classes];
    for a in &gt.annotations {
        let img = image_index[a.image.id.as_str()];
        gt_cells[a.category_id as usize][img].push(a.bbox);
    }
    let mut det_cells: Vec<Vec<Vec<(f64, BoundingBox)>>> = vec![vec![Vec::new(); n_images]; n_classes];
    for d in dets {
        let img =
            *image_index.get(d.image_id.as_str()).ok_or_else(|| MetricsError::UnknownImage(d.image_id.clone()))?;
        if !gt.label_space.contains(d.category_id) {
            return Err(MetricsError::UnknownCategory(d.category_id));
        }
        det_cells[d.category_id as usize][img].push((d.score, d.bbox));
    }

    let classes: Vec<ClassMetrics> = gt
        .label_space
        .categories()
        .iter()
        .map(|cat| {
            let c = cat.id as usize;
            evaluate_class(cat.id, &cat.canonical_name, &gt_cells[c], &det_cells[c], score_thr_f1)
        })
        .collect();

    let counted: Vec<&ClassMetrics> = classes.iter().filter(|c| c.has_gt()).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64
        }
    };
    let all = SummaryRow {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        ap50: mean(|c| c.ap50),
        ap50_95: mean(|c| c.ap50_95),
    };
    Ok(MetricsReport { score_threshold: score_thr_f1, all, classes })
}

fn evaluate_class(
    category_id: u32,
    name: &str,
    gt: &[Vec<BoundingBox>],
    dets: &[Vec<(f64, BoundingBox)>],
    score_thr: f64,
) -> ClassMetrics {
    let gt_count: usize = gt.iter().map(Vec::len).sum();
    let det_count: usize = dets.iter().map(Vec::len).sum();
    let mut aps = [0.0; IOU_THRESHOLDS.len()];
    let (mut tp_at_thr, mut det_at_thr) = (0usize, 0usize);
    for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
        let mut matches = Vec::with_capacity(det_count);
        for (g, d) in gt.iter().zip(dets) {
            let m = match_detections(g, d, thr);
            if t == 0 {
                for dm in m.detections.iter().filter(|dm| dm.score >= score_thr) {
                    det_at_thr += 1;
                    tp_at_thr += usize::from(dm.is_tp());
                }
            }
            matches.extend(m.detections.iter().map(|dm| (dm.score, dm.is_tp())));
        }
        aps[t] = pr_curve(&matches, gt_count).map(|p| average_precision(&p)).unwrap_or(0.0);
    }
    let precision = if det_at_thr > 0 { tp_at_thr as f64 / det_at_thr as f64 } else { 0.0 };
    let recall = if gt_count > 0 { tp_at_thr as f64 / gt_count as f64 } else { 0.0 };
    ClassMetrics {
        category_id,
        name: name.into(),
        precision,
        recall,
        f1: f1_score(precision, recall),
        ap50: aps[0],
        ap50_95: aps.iter().sum::<f64>() / aps.len() as f64,
        gt_count,
        det_count,
    }
}
