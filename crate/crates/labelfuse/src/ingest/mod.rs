//! Annotation and prediction file formats.

mod coco;
mod detections;
mod yolo;

use std::io;
use std::path::PathBuf;

use labelfuse_core::model::ModelError;
use serde::Serialize;
use thiserror::Error;

pub use coco::{export_coco, parse_coco_dataset, parse_coco_unified};
pub use detections::{parse_detections, write_detections};
pub use yolo::{box_to_yolo, export_yolo, parse_yolo_dataset, read_names, yolo_to_box};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatKind {
    CocoAnnotations,
    YoloDirectory,
    CocoDetections,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dangling reference: {0}")]
    DanglingRef(String),
    #[error("{file}:{line}: class index {index} out of range for {len} names")]
    IndexOutOfRange { file: String, line: usize, index: usize, len: usize },
    #[error("no pixel dimensions for image `{0}`")]
    MissingDimensions(String),
    #[error("detection {index}: score {score} outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("detection {index}: category {category_id} not in the model's label space")]
    UnknownCategory { index: usize, category_id: i64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn json(origin: &str, e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => Self::Schema(format!("{origin}: {e}")),
            Category::Io | Category::Syntax | Category::Eof => {
                Self::Parse { origin: origin.into(), line: e.line(), column: e.column(), message: e.to_string() }
            }
        }
    }
}

/// What a parser dropped or changed while loading a document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    /// Boxes partially outside their image, clamped to it.
    pub clamped: usize,
    /// Boxes entirely outside their image.
    pub dropped_out_of_frame: usize,
    /// Boxes with zero or negative width or height.
    pub dropped_degenerate: usize,
    /// Source category ids in document order; position is the new id.
    pub original_category_ids: Vec<i64>,
}
