use labelfuse_core::model::{BoundingBox, Detection, LabelSpace};
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum ImageId {
    Text(String),
    Number(i64),
}

#[derive(Debug, Deserialize, Serialize)]
struct RawDetection {
    image_id: ImageId,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
}

/// Parses a detection-results array. `image_id` may be a string or an
/// integer; integers become their decimal text.
pub fn parse_detections(
    document: &str,
    model_id: &str,
    model_space: &LabelSpace,
) -> Result<Vec<Detection>, IngestError> {
    let raw: Vec<RawDetection> = serde_json::from_str(document).map_err(|e| IngestError::json(model_id, e))?;
    raw.into_iter()
        .enumerate()
        .map(|(index, r)| {
            if !(0.0..=1.0).contains(&r.score) {
                return Err(IngestError::ScoreOutOfRange { index, score: r.score });
            }
            let category_id = u32::try_from(r.category_id)
                .ok()
                .filter(|&c| model_space.contains(c))
                .ok_or(IngestError::UnknownCategory { index, category_id: r.category_id })?;
            let image_id = match r.image_id {
                ImageId::Text(s) => s,
                ImageId::Number(n) => n.to_string(),
            };
            let [x, y, w, h] = r.bbox;
            Ok(Detection::new(image_id, category_id, BoundingBox::new(x, y, w, h)?, r.score, model_id)?)
        })
        .collect()
}

/// Writes detections in the results-array format, dropping `model_id`.
pub fn write_detections(dets: &[Detection]) -> String {
    let raw: Vec<RawDetection> = dets
        .iter()
        .map(|d| RawDetection {
            image_id: ImageId::Text(d.image_id.clone()),
            category_id: i64::from(d.category_id),
            bbox: d.bbox.to_array(),
            score: d.score,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("detections serialize") + "\n"
}
