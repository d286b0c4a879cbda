//! Human review state machine.
//!
//! Items start `Pending` and move exactly once to a terminal status. Every
//! change is expressed as a [`LogRecord`]; [`ReviewState::apply`] folds
//! records into state, so replaying a log from empty reproduces the live
//! state. Persistence and transport live outside this crate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Annotation, AnnotationKey, BoundingBox, LabelSpace, ModelError, Provenance, PseudoLabel, ReviewAction,
    UnifiedDataset,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReviewError {
    #[error("review item `{0}` not found")]
    NotFound(String),
    #[error("review item `{0}` was already decided")]
    AlreadyDecided(String),
    #[error("category {0} is not in the unified label space")]
    InvalidCategory(u32),
    #[error("adjusted box {0} is not valid for its image")]
    InvalidBox(BoundingBox),
    #[error("item `{0}` is not a pending pseudo-label candidate")]
    NotPending(String),
    #[error("page limit must be in 1..=500 (got {0})")]
    BadPage(usize),
    #[error("log record {got} out of sequence (expected {expected})")]
    OutOfSequence { expected: u64, got: u64 },
    #[error("log record for `{item}` does not match current state")]
    ReplayMismatch { item: String },
}

pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Relabeled { new_category_id: u32 },
    Adjusted { new_bbox: BoundingBox },
}

/// Status without payload, for filtering and counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusKind {
    Pending,
    Accepted,
    Rejected,
    Relabeled,
    Adjusted,
}

impl StatusKind {
    pub const ALL: [StatusKind; 5] = [Self::Pending, Self::Accepted, Self::Rejected, Self::Relabeled, Self::Adjusted];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Relabeled => "relabeled",
            Self::Adjusted => "adjusted",
        }
    }
}

impl ReviewStatus {
    pub fn kind(&self) -> StatusKind {
        match self {
            Self::Pending => StatusKind::Pending,
            Self::Accepted => StatusKind::Accepted,
            Self::Rejected => StatusKind::Rejected,
            Self::Relabeled { .. } => StatusKind::Relabeled,
            Self::Adjusted { .. } => StatusKind::Adjusted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    Relabel { category_id: u32 },
    Adjust { bbox: BoundingBox },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub candidate: Annotation,
    /// Pixel size of the candidate's image, used to validate adjusted boxes.
    pub image_width: u32,
    pub image_height: u32,
    pub status: ReviewStatus,
    pub decided_by: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub decided_at: Option<u64>,
}

impl ReviewItem {
    pub fn pending(item_id: impl Into<String>, candidate: Annotation, image_width: u32, image_height: u32) -> Self {
        Self {
            item_id: item_id.into(),
            candidate,
            image_width,
            image_height,
            status: ReviewStatus::Pending,
            decided_by: None,
            decided_at: None,
        }
    }

    pub fn pseudo(&self) -> Option<&PseudoLabel> {
        match &self.candidate.provenance {
            Provenance::Pseudo(p) => Some(p),
            _ => None,
        }
    }

    /// Validates a decision and returns the status it would produce.
    pub fn check_decision(&self, decision: &Decision, space: &LabelSpace) -> Result<ReviewStatus, ReviewError> {
        if self.status != ReviewStatus::Pending {
            return Err(ReviewError::AlreadyDecided(self.item_id.clone()));
        }
        Ok(match decision {
            Decision::Accept => ReviewStatus::Accepted,
            Decision::Reject => ReviewStatus::Rejected,
            Decision::Relabel { category_id } => {
                if !space.contains(*category_id) {
                    return Err(ReviewError::InvalidCategory(*category_id));
                }
                ReviewStatus::Relabeled { new_category_id: *category_id }
            }
            Decision::Adjust { bbox } => {
                if !bbox.is_inside(self.image_width, self.image_height) {
                    return Err(ReviewError::InvalidBox(*bbox));
                }
                ReviewStatus::Adjusted { new_bbox: *bbox }
            }
        })
    }

    /// The annotation this item contributes once decided, if any.
    pub fn verified_annotation(&self) -> Option<Annotation> {
        let original = self.pseudo()?.clone();
        let (category_id, bbox, action) = match &self.status {
            ReviewStatus::Accepted => (self.candidate.category_id, self.candidate.bbox, ReviewAction::Accepted),
            ReviewStatus::Relabeled { new_category_id } => {
                (*new_category_id, self.candidate.bbox, ReviewAction::Relabeled)
            }
            ReviewStatus::Adjusted { new_bbox } => (self.candidate.category_id, *new_bbox, ReviewAction::Adjusted),
            ReviewStatus::Pending | ReviewStatus::Rejected => return None,
        };
        Some(Annotation {
            image: self.candidate.image.clone(),
            category_id,
            bbox,
            provenance: Provenance::Verified {
                reviewer: self.decided_by.clone().unwrap_or_default(),
                original,
                action,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sequence_no: u64,
    pub item_id: String,
    pub prior_status: ReviewStatus,
    pub new_status: ReviewStatus,
    pub actor: String,
    pub timestamp: u64,
}

/// One line of the append-only review log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Enqueued { sequence_no: u64, item: ReviewItem },
    Decided(AuditRecord),
}

impl LogRecord {
    pub fn sequence_no(&self) -> u64 {
        match self {
            Self::Enqueued { sequence_no, .. } => *sequence_no,
            Self::Decided(a) => a.sequence_no,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub relabeled: usize,
    pub adjusted: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.pending + self.accepted + self.rejected + self.relabeled + self.adjusted
    }

    pub fn get(&self, kind: StatusKind) -> usize {
        match kind {
            StatusKind::Pending => self.pending,
            StatusKind::Accepted => self.accepted,
            StatusKind::Rejected => self.rejected,
            StatusKind::Relabeled => self.relabeled,
            StatusKind::Adjusted => self.adjusted,
        }
    }

    fn bump(&mut self, kind: StatusKind) {
        match kind {
            StatusKind::Pending => self.pending += 1,
            StatusKind::Accepted => self.accepted += 1,
            StatusKind::Rejected => self.rejected += 1,
            StatusKind::Relabeled => self.relabeled += 1,
            StatusKind::Adjusted => self.adjusted += 1,
        }
    }
}

/// Items keyed (and therefore listed) by ascending `item_id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewState {
    pub items: BTreeMap<String, ReviewItem>,
    pub last_sequence: u64,
}

impl ReviewState {
    pub fn next_sequence(&self) -> u64 {
        self.last_sequence + 1
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.items.get(item_id)
    }

    /// Log records that enqueue the new items among `items`, plus the number
    /// of duplicates skipped (already stored or repeated in the batch).
    pub fn plan_enqueue(&self, items: Vec<ReviewItem>) -> Result<(Vec<LogRecord>, usize), ReviewError> {
        let mut seq = self.next_sequence();
        let mut seen = BTreeSet::new();
        let mut records = Vec::new();
        let mut duplicates = 0;
        for item in items {
            if item.status != ReviewStatus::Pending || item.pseudo().is_none() {
                return Err(ReviewError::NotPending(item.item_id));
            }
            if self.items.contains_key(&item.item_id) || !seen.insert(item.item_id.clone()) {
                duplicates += 1;
                continue;
            }
            records.push(LogRecord::Enqueued { sequence_no: seq, item });
            seq += 1;
        }
        Ok((records, duplicates))
    }

    /// Validates a decision and returns the audit record that applies it.
    pub fn plan_decision(
        &self,
        item_id: &str,
        decision: &Decision,
        actor: &str,
        timestamp: u64,
        space: &LabelSpace,
    ) -> Result<AuditRecord, ReviewError> {
        let item = self.items.get(item_id).ok_or_else(|| ReviewError::NotFound(item_id.into()))?;
        let new_status = item.check_decision(decision, space)?;
        Ok(AuditRecord {
            sequence_no: self.next_sequence(),
            item_id: item_id.into(),
            prior_status: item.status.clone(),
            new_status,
            actor: actor.into(),
            timestamp,
        })
    }

    /// Folds one log record into the state.
    pub fn apply(&mut self, record: LogRecord) -> Result<(), ReviewError> {
        let expected = self.next_sequence();
        if record.sequence_no() != expected {
            return Err(ReviewError::OutOfSequence { expected, got: record.sequence_no() });
        }
        match record {
            LogRecord::Enqueued { item, .. } => {
                if self.items.contains_key(&item.item_id) {
                    return Err(ReviewError::ReplayMismatch { item: item.item_id });
                }
                self.items.insert(item.item_id.clone(), item);
            }
            LogRecord::Decided(a) => {
                let item = self.items.get_mut(&a.item_id).ok_or_else(|| ReviewError::NotFound(a.item_id.clone()))?;
                if item.status != ReviewStatus::Pending || item.status != a.prior_status {
                    return Err(ReviewError::ReplayMismatch { item: a.item_id });
                }
                item.status = a.new_status;
                item.decided_by = Some(a.actor);
                item.decided_at = Some(a.timestamp);
            }
        }
        self.last_sequence = expected;
        Ok(())
    }

    pub fn replay<I: IntoIterator<Item = LogRecord>>(records: I) -> Result<Self, ReviewError> {
        let mut state = Self::default();
        for r in records {
            state.apply(r)?;
        }
        Ok(state)
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for item in self.items.values() {
            c.bump(item.status.kind());
        }
        c
    }

    /// A page of items matching `filter`, plus the total match count.
    pub fn list(
        &self,
        filter: Option<StatusKind>,
        offset: usize,
        limit: usize,
    ) -> Result<(Vec<&ReviewItem>, usize), ReviewError> {
        if !(1..=MAX_PAGE).contains(&limit) {
            return Err(ReviewError::BadPage(limit));
        }
        let matching = || self.items.values().filter(|i| filter.is_none_or(|k| i.status.kind() == k));
        let total = matching().count();
        Ok((matching().skip(offset).take(limit).collect(), total))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyReport {
    /// Verified annotations newly added to the dataset.
    pub added: usize,
    /// Verified annotations that were already present (re-application).
    pub already_present: usize,
    pub rejected: usize,
    pub pending: usize,
}

/// Folds decided review items into the unified dataset as verified labels.
/// Applying the same items again leaves the dataset unchanged.
pub fn apply_decisions<'a, I>(u: &UnifiedDataset, items: I) -> Result<(UnifiedDataset, ApplyReport), ModelError>
where
    I: IntoIterator<Item = &'a ReviewItem>,
{
    let mut present: BTreeSet<AnnotationKey> = u.annotations.iter().map(Annotation::key).collect();
    let mut annotations = u.annotations.clone();
    let mut report = ApplyReport::default();
    for item in items {
        match item.status.kind() {
            StatusKind::Pending => report.pending += 1,
            StatusKind::Rejected => report.rejected += 1,
            _ => {
                let Some(ann) = item.verified_annotation() else { continue };
                if present.insert(ann.key()) {
                    annotations.push(ann);
                    report.added += 1;
                } else {
                    report.already_present += 1;
                }
            }
        }
    }
    let out = UnifiedDataset::new(u.label_space.clone(), u.images.clone(), annotations)?;
    Ok((out, report))
}
