//! Pipeline configuration file (TOML).
//!
//! ```toml
//! output = "out"
//! aliases = "aliases.txt"
//! f1_score_threshold = 0.5
//!
//! [[datasets]]
//! id = "city"
//! format = "coco"
//! path = "city/annotations.json"
//!
//! [[datasets]]
//! id = "rural"
//! format = "yolo"
//! path = "rural"
//!
//! [[detections]]
//! model_id = "city-model"
//! path = "preds/city_model_on_rural.json"
//! space_of = "city"
//!
//! [fusion]
//! tau_accept = 0.7
//! ```
//!
//! Relative paths resolve against `LABELFUSE_DATA_ROOT` when set, otherwise
//! against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use labelfuse_core::fuse::FusionConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATA_ROOT_ENV: &str = "LABELFUSE_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Coco,
    Yolo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub id: String,
    pub format: SourceFormat,
    /// COCO document, or YOLO root directory.
    pub path: PathBuf,
    /// YOLO class names; defaults to the root's `names.txt`.
    pub names: Option<Vec<String>>,
    /// Directory that image file paths are relative to. Defaults to the
    /// COCO document's directory or the YOLO root.
    pub images: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSource {
    pub model_id: String,
    pub path: PathBuf,
    /// Dataset whose label space the model predicts in.
    pub space_of: String,
    /// Datasets the predictions were made on. Defaults to every dataset
    /// except `space_of`, matched by image id.
    pub runs_on: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub aliases: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetSource>,
    #[serde(default)]
    pub detections: Vec<DetectionSource>,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default = "default_f1")]
    pub f1_score_threshold: f64,
    /// Fusion worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

fn default_output() -> PathBuf {
    PathBuf::from("labelfuse-out")
}

fn default_f1() -> f64 {
    0.5
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output: default_output(),
            aliases: None,
            datasets: Vec::new(),
            detections: Vec::new(),
            fusion: FusionConfig::default(),
            f1_score_threshold: default_f1(),
            threads: 0,
        }
    }
}

fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Syntax { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates, and resolves relative paths against `base`, or the
    /// data-root environment variable, or the config's directory.
    pub fn load(path: &Path, base: Option<&Path>) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text, path)?;
        let config_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = match base {
            Some(b) => b.to_path_buf(),
            None => std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| config_dir.clone()),
        };
        cfg.resolve(&base, &config_dir);
        Ok(cfg)
    }

    fn resolve(&mut self, data: &Path, config_dir: &Path) {
        let join = |root: &Path, p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for d in &mut self.datasets {
            join(data, &mut d.path);
            if let Some(i) = &mut d.images {
                join(data, i);
            }
        }
        for d in &mut self.detections {
            join(data, &mut d.path);
        }
        if let Some(a) = &mut self.aliases {
            join(data, a);
        }
        join(config_dir, &mut self.output);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !is_safe_id(&d.id) {
                return invalid(format!("dataset id `{}` must be a plain name", d.id));
            }
            if !ids.insert(d.id.as_str()) {
                return invalid(format!("duplicate dataset id `{}`", d.id));
            }
            if d.format == SourceFormat::Coco && d.names.is_some() {
                return invalid(format!("dataset `{}`: `names` only applies to yolo datasets", d.id));
            }
        }
        let mut models = BTreeSet::new();
        for m in &self.detections {
            if m.model_id.is_empty() || m.model_id.contains('+') {
                return invalid(format!("model id `{}` must be non-empty and free of `+`", m.model_id));
            }
            if !models.insert(m.model_id.as_str()) {
                return invalid(format!("duplicate model id `{}`", m.model_id));
            }
            if !ids.contains(m.space_of.as_str()) {
                return invalid(format!("detections `{}`: space_of `{}` is not a dataset", m.model_id, m.space_of));
            }
            for t in m.runs_on.iter().flatten() {
                if !ids.contains(t.as_str()) {
                    return invalid(format!("detections `{}`: runs_on `{t}` is not a dataset", m.model_id));
                }
            }
        }
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.f1_score_threshold) {
            return invalid(format!("f1_score_threshold {} outside [0, 1]", self.f1_score_threshold));
        }
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetSource> {
        self.datasets.iter().find(|d| d.id == id)
    }

    /// Datasets a detection source applies to.
    pub fn targets_of<'a>(&'a self, m: &'a DetectionSource) -> Vec<&'a str> {
        match &m.runs_on {
            Some(v) => v.iter().map(String::as_str).collect(),
            None => self.datasets.iter().map(|d| d.id.as_str()).filter(|&id| id != m.space_of).collect(),
        }
    }
}

impl DatasetSource {
    pub fn image_root(&self) -> PathBuf {
        match (&self.images, self.format) {
            (Some(p), _) => p.clone(),
            (None, SourceFormat::Yolo) => self.path.clone(),
            (None, SourceFormat::Coco) => self.path.parent().map(Path::to_path_buf).unwrap_or_default(),
        }
    }
}
