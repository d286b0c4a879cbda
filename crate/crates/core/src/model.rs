//! Shared domain types.
//!
//! All types are immutable values once constructed. Constructors validate the
//! invariants; the fields are public for reading, but code that builds values
//! by hand is expected to go through `new`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("box has non-finite coordinates")]
    NonFiniteBox,
    #[error("box must have positive width and height (got {w} x {h})")]
    EmptyBox { w: f64, h: f64 },
    #[error("box does not intersect its image")]
    DegenerateBox,
    #[error("box {bbox} is not inside image {width}x{height}")]
    BoxOutsideImage { bbox: BoundingBox, width: u32, height: u32 },
    #[error("category name is empty")]
    EmptyName,
    #[error("category name `{0}` is not trimmed lowercase")]
    UnnormalizedName(String),
    #[error("category ids must be dense 0..k in order (position {position} has id {id})")]
    NonDenseIds { position: usize, id: u32 },
    #[error("duplicate category name `{0}`")]
    DuplicateName(String),
    #[error("alias `{alias}` of category `{owner}` is the name of another category")]
    AliasShadowsCategory { alias: String, owner: String },
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("duplicate image `{0}`")]
    DuplicateImage(ImageKey),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("unknown category id {0}")]
    UnknownCategory(u32),
    #[error("annotation references unknown image {0}")]
    UnknownImage(ImageKey),
    #[error("duplicate annotation on {0}")]
    DuplicateAnnotation(ImageKey),
    #[error("label space does not match the unified space")]
    LabelSpaceMismatch,
}

/// Axis-aligned box in absolute pixels, top-left corner plus size.
///
/// The corner may be negative for raw detector output; boxes attached to an
/// [`Annotation`] always lie inside their image (see [`clamp_box`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(ModelError::NonFiniteBox);
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(ModelError::EmptyBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    /// Area computed from the corners, so that intersecting a box with itself
    /// yields exactly its own area.
    pub fn area(&self) -> f64 {
        (self.x2() - self.x) * (self.y2() - self.y)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn is_inside(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x2() <= f64::from(width) && self.y2() <= f64::from(height)
    }

    fn bits(&self) -> [u64; 4] {
        [self.x.to_bits(), self.y.to_bits(), self.w.to_bits(), self.h.to_bits()]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = ModelError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

/// Clamps one axis `[start, start + len)` to `[0, limit]`.
fn clamp_axis(start: f64, len: f64, limit: f64) -> Option<(f64, f64)> {
    if start >= 0.0 && start + len <= limit {
        return Some((start, len));
    }
    let lo = start.max(0.0);
    let hi = (start + len).min(limit);
    if hi <= lo {
        return None;
    }
    let mut clamped = hi - lo;
    // `lo + (hi - lo)` can round above `hi`; shrink until the far edge fits.
    while lo + clamped > limit {
        clamped = clamped.next_down();
    }
    (clamped > 0.0).then_some((lo, clamped))
}

/// Intersects `b` with its image. Axes already inside the image are returned
/// untouched, which makes clamping idempotent bit for bit.
pub fn clamp_box(b: &BoundingBox, img: &ImageRecord) -> Result<BoundingBox, ModelError> {
    let (x, w) = clamp_axis(b.x, b.w, f64::from(img.width)).ok_or(ModelError::DegenerateBox)?;
    let (y, h) = clamp_axis(b.y, b.h, f64::from(img.height)).ok_or(ModelError::DegenerateBox)?;
    BoundingBox::new(x, y, w, h)
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: u32,
    pub canonical_name: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub aliases: BTreeSet<String>,
}

impl CategorySpec {
    /// Names are trimmed and lowercased; empty aliases are ignored, and an
    /// alias equal to the canonical name is dropped.
    pub fn new<I, S>(id: u32, canonical_name: &str, aliases: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let canonical_name = normalize_name(canonical_name);
        if canonical_name.is_empty() {
            return Err(ModelError::EmptyName);
        }
        let aliases = aliases
            .into_iter()
            .map(|a| normalize_name(a.as_ref()))
            .filter(|a| !a.is_empty() && *a != canonical_name)
            .collect();
        Ok(Self { id, canonical_name, aliases })
    }

    pub fn named(id: u32, canonical_name: &str) -> Result<Self, ModelError> {
        Self::new(id, canonical_name, core::iter::empty::<&str>())
    }
}

/// An ordered set of categories with dense ids `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<CategorySpec>", into = "Vec<CategorySpec>")]
pub struct LabelSpace {
    categories: Vec<CategorySpec>,
}

impl LabelSpace {
    pub fn new(categories: Vec<CategorySpec>) -> Result<Self, ModelError> {
        let mut names = BTreeSet::new();
        for (position, c) in categories.iter().enumerate() {
            if c.id as usize != position {
                return Err(ModelError::NonDenseIds { position, id: c.id });
            }
            if c.canonical_name.is_empty() {
                return Err(ModelError::EmptyName);
            }
            if c.canonical_name != normalize_name(&c.canonical_name) {
                return Err(ModelError::UnnormalizedName(c.canonical_name.clone()));
            }
            if !names.insert(c.canonical_name.as_str()) {
                return Err(ModelError::DuplicateName(c.canonical_name.clone()));
            }
        }
        for c in &categories {
            if let Some(alias) = c.aliases.iter().find(|a| **a != c.canonical_name && names.contains(a.as_str())) {
                return Err(ModelError::AliasShadowsCategory { alias: alias.clone(), owner: c.canonical_name.clone() });
            }
        }
        Ok(Self { categories })
    }

    /// Builds a space from names in order, assigning ids by position.
    pub fn from_names<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let categories = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| CategorySpec::named(i as u32, n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(categories)
    }

    pub fn categories(&self) -> &[CategorySpec] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.categories.len()
    }

    pub fn get(&self, id: u32) -> Option<&CategorySpec> {
        self.categories.get(id as usize)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.get(id).map(|c| c.canonical_name.as_str())
    }

    /// Looks up a category by canonical name (case-insensitive).
    pub fn find(&self, name: &str) -> Option<u32> {
        let name = normalize_name(name);
        self.categories.iter().find(|c| c.canonical_name == name).map(|c| c.id)
    }
}

impl TryFrom<Vec<CategorySpec>> for LabelSpace {
    type Error = ModelError;

    fn try_from(categories: Vec<CategorySpec>) -> Result<Self, Self::Error> {
        Self::new(categories)
    }
}

impl From<LabelSpace> for Vec<CategorySpec> {
    fn from(space: LabelSpace) -> Self {
        space.categories
    }
}

/// Globally unique image reference: `(source dataset, image id)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageKey {
    pub dataset: String,
    pub id: String,
}

impl ImageKey {
    pub fn new(dataset: impl Into<String>, id: impl Into<String>) -> Self {
        Self { dataset: dataset.into(), id: id.into() }
    }
}

impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source_dataset: String,
    pub file_path: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        source_dataset: impl Into<String>,
        file_path: impl Into<String>,
        width: u32,
        height: u32,
    ) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyImage);
        }
        Ok(Self { id: id.into(), source_dataset: source_dataset.into(), file_path: file_path.into(), width, height })
    }

    pub fn key(&self) -> ImageKey {
        ImageKey::new(self.source_dataset.clone(), self.id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub model_id: String,
    pub confidence: f64,
}

impl PseudoLabel {
    pub fn new(model_id: impl Into<String>, confidence: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::ScoreOutOfRange(confidence));
        }
        Ok(Self { model_id: model_id.into(), confidence })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewAction {
    Accepted,
    Relabeled,
    Adjusted,
}

impl ReviewAction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accepted => "accepted",
            Self::Relabeled => "relabeled",
            Self::Adjusted => "adjusted",
        }
    }
}

/// Where a label came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    #[serde(rename = "gt")]
    GroundTruth,
    Pseudo(PseudoLabel),
    Verified {
        reviewer: String,
        original: PseudoLabel,
        action: ReviewAction,
    },
}

impl Provenance {
    /// Ranking score: ground truth and human-verified labels count as 1.0.
    pub fn confidence(&self) -> f64 {
        match self {
            Self::GroundTruth | Self::Verified { .. } => 1.0,
            Self::Pseudo(p) => p.confidence,
        }
    }

    pub fn source_tag(&self) -> &'static str {
        match self {
            Self::GroundTruth => "gt",
            Self::Pseudo(_) => "pseudo",
            Self::Verified { .. } => "verified",
        }
    }

    fn key(&self) -> ProvenanceKey {
        match self {
            Self::GroundTruth => ProvenanceKey::GroundTruth,
            Self::Pseudo(p) => ProvenanceKey::Pseudo(p.model_id.clone(), p.confidence.to_bits()),
            Self::Verified { reviewer, original, action } => ProvenanceKey::Verified(
                reviewer.clone(),
                original.model_id.clone(),
                original.confidence.to_bits(),
                *action,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum ProvenanceKey {
    GroundTruth,
    Pseudo(String, u64),
    Verified(String, String, u64, ReviewAction),
}

/// Bitwise identity of an annotation, used to detect exact duplicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AnnotationKey {
    image: ImageKey,
    category_id: u32,
    bbox: [u64; 4],
    provenance: ProvenanceKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: ImageKey,
    pub category_id: u32,
    pub bbox: BoundingBox,
    pub provenance: Provenance,
}

impl Annotation {
    pub fn new(
        image: &ImageRecord,
        category_id: u32,
        bbox: BoundingBox,
        provenance: Provenance,
        space: &LabelSpace,
    ) -> Result<Self, ModelError> {
        let ann = Self { image: image.key(), category_id, bbox, provenance };
        ann.validate(image, space)?;
        Ok(ann)
    }

    pub fn validate(&self, image: &ImageRecord, space: &LabelSpace) -> Result<(), ModelError> {
        if !space.contains(self.category_id) {
            return Err(ModelError::UnknownCategory(self.category_id));
        }
        if !self.bbox.is_inside(image.width, image.height) {
            return Err(ModelError::BoxOutsideImage { bbox: self.bbox, width: image.width, height: image.height });
        }
        if let Provenance::Pseudo(p) | Provenance::Verified { original: p, .. } = &self.provenance {
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(ModelError::ScoreOutOfRange(p.confidence));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> AnnotationKey {
        AnnotationKey {
            image: self.image.clone(),
            category_id: self.category_id,
            bbox: self.bbox.bits(),
            provenance: self.provenance.key(),
        }
    }
}

/// One raw prediction of an external model, in that model's label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub image_id: String,
    pub category_id: u32,
    pub bbox: BoundingBox,
    pub score: f64,
    pub model_id: String,
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: String,
    category_id: u32,
    bbox: BoundingBox,
    score: f64,
    model_id: String,
}

impl TryFrom<RawDetection> for Detection {
    type Error = ModelError;

    fn try_from(r: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(r.image_id, r.category_id, r.bbox, r.score, r.model_id)
    }
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        category_id: u32,
        bbox: BoundingBox,
        score: f64,
        model_id: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ModelError::ScoreOutOfRange(score));
        }
        Ok(Self { image_id: image_id.into(), category_id, bbox, score, model_id: model_id.into() })
    }
}

/// Orders by score descending. Scores are finite by construction.
pub(crate) fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn index_images(images: &[ImageRecord]) -> Result<BTreeMap<ImageKey, &ImageRecord>, ModelError> {
    let mut index = BTreeMap::new();
    for img in images {
        if index.insert(img.key(), img).is_some() {
            return Err(ModelError::DuplicateImage(img.key()));
        }
    }
    Ok(index)
}

fn validate_annotations(
    images: &[ImageRecord],
    annotations: &[Annotation],
    space: &LabelSpace,
) -> Result<(), ModelError> {
    let index = index_images(images)?;
    for ann in annotations {
        let img = index.get(&ann.image).ok_or_else(|| ModelError::UnknownImage(ann.image.clone()))?;
        ann.validate(img, space)?;
    }
    Ok(())
}

/// A source dataset `D_i` with its own label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub label_space: LabelSpace,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn new(
        id: impl Into<String>,
        label_space: LabelSpace,
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
    ) -> Result<Self, ModelError> {
        validate_annotations(&images, &annotations, &label_space)?;
        Ok(Self { id: id.into(), label_space, images, annotations })
    }

    pub fn image(&self, key: &ImageKey) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.source_dataset == key.dataset && i.id == key.id)
    }
}

/// The merged dataset `D_U` over the unified label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedDataset {
    pub label_space: LabelSpace,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
}

impl UnifiedDataset {
    pub fn new(
        label_space: LabelSpace,
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
    ) -> Result<Self, ModelError> {
        validate_annotations(&images, &annotations, &label_space)?;
        let mut seen = BTreeSet::new();
        for ann in &annotations {
            if !seen.insert(ann.key()) {
                return Err(ModelError::DuplicateAnnotation(ann.image.clone()));
            }
        }
        Ok(Self { label_space, images, annotations })
    }

    /// Merges datasets that have already been remapped into `space`.
    pub fn from_remapped(space: LabelSpace, datasets: &[Dataset]) -> Result<Self, ModelError> {
        if datasets.iter().any(|d| d.label_space != space) {
            return Err(ModelError::LabelSpaceMismatch);
        }
        let images = datasets.iter().flat_map(|d| d.images.iter().cloned()).collect();
        let annotations = datasets.iter().flat_map(|d| d.annotations.iter().cloned()).collect();
        Self::new(space, images, annotations)
    }

    /// Counts of annotations by provenance tag: `(gt, pseudo, verified)`.
    pub fn provenance_counts(&self) -> (usize, usize, usize) {
        self.annotations.iter().fold((0, 0, 0), |(g, p, v), a| match a.provenance {
            Provenance::GroundTruth => (g + 1, p, v),
            Provenance::Pseudo(_) => (g, p + 1, v),
            Provenance::Verified { .. } => (g, p, v + 1),
        })
    }

    pub fn to_string_summary(&self) -> String {
        let (g, p, v) = self.provenance_counts();
        alloc::format!(
            "{} classes, {} images, {} annotations (gt {}, pseudo {}, verified {})",
            self.label_space.len(),
            self.images.len(),
            self.annotations.len(),
            g,
            p,
            v
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn img(w: u32, h: u32) -> ImageRecord {
        ImageRecord::new("i", "d", "i.png", w, h).unwrap()
    }

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn clamp_inside_is_identity() {
        assert_eq!(clamp_box(&bb(5.0, 5.0, 10.0, 10.0), &img(100, 100)).unwrap(), bb(5.0, 5.0, 10.0, 10.0));
    }

    #[test]
    fn clamp_partially_outside() {
        // per-axis interval intersection: [-5, 15) ∩ [0, 100] = [0, 15)
        assert_eq!(clamp_box(&bb(-5.0, -5.0, 20.0, 20.0), &img(100, 100)).unwrap(), bb(0.0, 0.0, 15.0, 15.0));
    }

    #[test]
    fn clamp_fully_outside_is_degenerate() {
        assert_eq!(clamp_box(&bb(200.0, 200.0, 10.0, 10.0), &img(100, 100)), Err(ModelError::DegenerateBox));
        // touching the edge has zero area
        assert_eq!(clamp_box(&bb(100.0, 0.0, 10.0, 10.0), &img(100, 100)), Err(ModelError::DegenerateBox));
    }

    #[test]
    fn names_are_normalized() {
        let c = CategorySpec::new(0, "  Car ", ["AUTO", "car"]).unwrap();
        assert_eq!(c.canonical_name, "car");
        assert_eq!(c.aliases.iter().collect::<Vec<_>>(), vec!["auto"]);
        assert_eq!(CategorySpec::named(0, "   "), Err(ModelError::EmptyName));
    }

    #[test]
    fn label_space_rejects_gaps_duplicates_and_shadowing() {
        let a = CategorySpec::named(0, "a").unwrap();
        let b = CategorySpec::named(2, "b").unwrap();
        assert!(matches!(LabelSpace::new(vec![a.clone(), b]), Err(ModelError::NonDenseIds { position: 1, id: 2 })));
        assert!(matches!(LabelSpace::from_names(["a", "A"]), Err(ModelError::DuplicateName(_))));
        let shadow = CategorySpec::new(1, "b", ["a"]).unwrap();
        assert!(matches!(LabelSpace::new(vec![a, shadow]), Err(ModelError::AliasShadowsCategory { .. })));
        let s = LabelSpace::from_names(["Car", "person"]).unwrap();
        assert_eq!(s.find("PERSON"), Some(1));
        assert!(!s.contains(2));
    }

    #[test]
    fn annotation_and_dataset_checks() {
        let space = LabelSpace::from_names(["car"]).unwrap();
        let image = img(50, 50);
        assert!(Annotation::new(&image, 1, bb(0.0, 0.0, 5.0, 5.0), Provenance::GroundTruth, &space).is_err());
        assert!(Annotation::new(&image, 0, bb(40.0, 0.0, 20.0, 5.0), Provenance::GroundTruth, &space).is_err());
        let ann = Annotation::new(&image, 0, bb(1.0, 1.0, 5.0, 5.0), Provenance::GroundTruth, &space).unwrap();
        let mut orphan = ann.clone();
        orphan.image = ImageKey::new("d", "missing");
        assert!(matches!(
            Dataset::new("d", space.clone(), vec![image.clone()], vec![orphan]),
            Err(ModelError::UnknownImage(_))
        ));
        assert!(matches!(
            UnifiedDataset::new(space, vec![image], vec![ann.clone(), ann]),
            Err(ModelError::DuplicateAnnotation(_))
        ));
    }

    #[test]
    fn provenance_confidence() {
        assert_eq!(Provenance::GroundTruth.confidence(), 1.0);
        let p = PseudoLabel::new("m", 0.4).unwrap();
        assert_eq!(Provenance::Pseudo(p.clone()).confidence(), 0.4);
        let v = Provenance::Verified { reviewer: "r".into(), original: p, action: ReviewAction::Accepted };
        assert_eq!(v.confidence(), 1.0);
        assert!(PseudoLabel::new("m", 1.2).is_err());
    }

    fn coord() -> impl Strategy<Value = f64> {
        prop_oneof![
            4 => -200.0f64..300.0,
            1 => Just(0.0),
            1 => Just(-1.0),
            1 => Just(f64::NAN),
            1 => Just(f64::INFINITY),
        ]
    }

    proptest! {
        #[test]
        fn box_constructor_rejects_exactly_invalid(x in coord(), y in coord(), w in coord(), h in coord()) {
            let valid = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0;
            prop_assert_eq!(BoundingBox::new(x, y, w, h).is_ok(), valid);
        }

        #[test]
        fn detection_constructor_rejects_exactly_bad_scores(score in -1.0f64..2.0) {
            let d = Detection::new("a", 0, bb(0.0, 0.0, 1.0, 1.0), score, "m");
            prop_assert_eq!(d.is_ok(), (0.0..=1.0).contains(&score));
        }

        #[test]
        fn image_constructor_rejects_exactly_zero_dims(w in 0u32..3, h in 0u32..3) {
            prop_assert_eq!(ImageRecord::new("i", "d", "p", w, h).is_ok(), w > 0 && h > 0);
        }

        #[test]
        fn clamp_is_idempotent_and_inside(
            x in -500.0f64..500.0, y in -500.0f64..500.0,
            w in 0.001f64..600.0, h in 0.001f64..600.0,
            iw in 1u32..400, ih in 1u32..400,
        ) {
            let image = img(iw, ih);
            let b = bb(x, y, w, h);
            if let Ok(c) = clamp_box(&b, &image) {
                prop_assert!(c.is_inside(iw, ih));
                prop_assert!(c.w > 0.0 && c.h > 0.0);
                prop_assert_eq!(clamp_box(&c, &image).unwrap(), c);
            } else {
                let ix = (x + w).min(iw as f64) - x.max(0.0);
                let iy = (y + h).min(ih as f64) - y.max(0.0);
                prop_assert!(ix <= 0.0 || iy <= 0.0);
            }
        }
    }
}
