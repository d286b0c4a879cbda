use std::collections::{BTreeMap, BTreeSet};

use labelfuse_core::model::{
    clamp_box, Annotation, BoundingBox, CategorySpec, Dataset, ImageRecord, LabelSpace, ModelError, Provenance,
    PseudoLabel, ReviewAction, UnifiedDataset,
};
use serde::{Deserialize, Serialize};

use super::{IngestError, ParseReport};

#[derive(Debug, Serialize, Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_image_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: i64,
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    #[serde(default, skip_deserializing)]
    area: f64,
    #[serde(default, skip_deserializing)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    review_action: Option<ReviewAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reviewer: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    aliases: Vec<String>,
}

struct Parsed {
    space: LabelSpace,
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    report: ParseReport,
}

fn provenance(a: &CocoAnnotation) -> Result<Provenance, IngestError> {
    let need = |field: &str| IngestError::Schema(format!("annotation {}: missing `{field}`", a.id));
    let pseudo = || -> Result<PseudoLabel, IngestError> {
        let model_id = a.model_id.clone().ok_or_else(|| need("model_id"))?;
        let confidence = a.confidence.ok_or_else(|| need("confidence"))?;
        Ok(PseudoLabel::new(model_id, confidence)?)
    };
    match a.source.as_deref() {
        None | Some("gt") => Ok(Provenance::GroundTruth),
        Some("pseudo") => Ok(Provenance::Pseudo(pseudo()?)),
        Some("verified") => Ok(Provenance::Verified {
            reviewer: a.reviewer.clone().ok_or_else(|| need("reviewer"))?,
            original: pseudo()?,
            action: a.review_action.ok_or_else(|| need("review_action"))?,
        }),
        Some(other) => Err(IngestError::Schema(format!("annotation {}: unknown source `{other}`", a.id))),
    }
}

fn parse(document: &str, dataset_id: &str) -> Result<Parsed, IngestError> {
    let doc: CocoDocument = serde_json::from_str(document).map_err(|e| IngestError::json(dataset_id, e))?;
    let mut report = ParseReport::default();

    let mut cat_index = BTreeMap::new();
    let mut categories = Vec::with_capacity(doc.categories.len());
    for (pos, c) in doc.categories.iter().enumerate() {
        if cat_index.insert(c.id, pos as u32).is_some() {
            return Err(IngestError::Schema(format!("duplicate category id {}", c.id)));
        }
        categories.push(CategorySpec::new(pos as u32, &c.name, &c.aliases)?);
        report.original_category_ids.push(c.id);
    }
    let space = LabelSpace::new(categories)?;

    let mut img_index = BTreeMap::new();
    let mut images = Vec::with_capacity(doc.images.len());
    for im in &doc.images {
        if img_index.insert(im.id, images.len()).is_some() {
            return Err(IngestError::Schema(format!("duplicate image id {}", im.id)));
        }
        let id = im.source_image_id.clone().unwrap_or_else(|| im.id.to_string());
        let ds = im.source_dataset.clone().unwrap_or_else(|| dataset_id.to_string());
        images.push(ImageRecord::new(id, ds, im.file_name.clone(), im.width, im.height)?);
    }

    let mut annotations = Vec::with_capacity(doc.annotations.len());
    for a in &doc.annotations {
        let img = img_index
            .get(&a.image_id)
            .map(|&i| &images[i])
            .ok_or_else(|| IngestError::DanglingRef(format!("annotation {} references image {}", a.id, a.image_id)))?;
        let cat = *cat_index.get(&a.category_id).ok_or_else(|| {
            IngestError::DanglingRef(format!("annotation {} references category {}", a.id, a.category_id))
        })?;
        let prov = provenance(a)?;
        let [x, y, w, h] = a.bbox;
        let raw = match BoundingBox::new(x, y, w, h) {
            Ok(b) => b,
            Err(ModelError::EmptyBox { .. }) => {
                report.dropped_degenerate += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let bbox = match clamp_box(&raw, img) {
            Ok(b) => b,
            Err(ModelError::DegenerateBox) => {
                report.dropped_out_of_frame += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if bbox != raw {
            report.clamped += 1;
        }
        annotations.push(Annotation::new(img, cat, bbox, prov, &space)?);
    }
    Ok(Parsed { space, images, annotations, report })
}

/// Parses a COCO-style annotation document. Category ids become positions in
/// the categories list; boxes are clamped to their image, and boxes with no
/// area inside it are dropped and counted.
pub fn parse_coco_dataset(document: &str, dataset_id: &str) -> Result<(Dataset, ParseReport), IngestError> {
    let p = parse(document, dataset_id)?;
    Ok((Dataset::new(dataset_id, p.space, p.images, p.annotations)?, p.report))
}

/// Parses a document written by [`export_coco`] back into a unified dataset.
/// Images without `source_dataset` are attributed to `"unified"`.
pub fn parse_coco_unified(document: &str) -> Result<(UnifiedDataset, ParseReport), IngestError> {
    let p = parse(document, "unified")?;
    Ok((UnifiedDataset::new(p.space, p.images, p.annotations)?, p.report))
}

fn coco_annotation(id: i64, image_id: i64, a: &Annotation) -> CocoAnnotation {
    let mut out = CocoAnnotation {
        id,
        image_id,
        category_id: i64::from(a.category_id),
        bbox: a.bbox.to_array(),
        area: a.bbox.area(),
        iscrowd: 0,
        source: Some(a.provenance.source_tag().to_string()),
        model_id: None,
        confidence: None,
        review_action: None,
        reviewer: None,
    };
    match &a.provenance {
        Provenance::GroundTruth => {}
        Provenance::Pseudo(p) => {
            out.model_id = Some(p.model_id.clone());
            out.confidence = Some(p.confidence);
        }
        Provenance::Verified { reviewer, original, action } => {
            out.model_id = Some(original.model_id.clone());
            out.confidence = Some(original.confidence);
            out.review_action = Some(*action);
            out.reviewer = Some(reviewer.clone());
        }
    }
    out
}

/// Serializes a unified dataset as a COCO-style document with provenance
/// extension fields. Image and annotation ids are 1-based positions;
/// category ids are the unified ids.
pub fn export_coco(u: &UnifiedDataset) -> String {
    let image_ids: BTreeMap<_, i64> = u.images.iter().enumerate().map(|(i, im)| (im.key(), i as i64 + 1)).collect();
    let images = u
        .images
        .iter()
        .enumerate()
        .map(|(i, im)| CocoImage {
            id: i as i64 + 1,
            file_name: im.file_path.clone(),
            width: im.width,
            height: im.height,
            source_dataset: Some(im.source_dataset.clone()),
            source_image_id: Some(im.id.clone()),
        })
        .collect();
    let annotations =
        u.annotations.iter().enumerate().map(|(i, a)| coco_annotation(i as i64 + 1, image_ids[&a.image], a)).collect();
    let categories = u
        .label_space
        .categories()
        .iter()
        .map(|c| CocoCategory {
            id: i64::from(c.id),
            name: c.canonical_name.clone(),
            aliases: c.aliases.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        })
        .collect();
    let doc = CocoDocument { images, annotations, categories };
    let mut text = serde_json::to_string_pretty(&doc).expect("COCO document serializes");
    text.push('\n');
    text
}
