//! Core model and algorithms for merging object-detection datasets with
//! disjoint label sets: label-space unification, pseudo-label fusion,
//! review state, COCO-style metrics and a seeded synthetic benchmark.
//!
//! Everything here is `no_std` + `alloc`; file formats, the review store and
//! the HTTP service live in the `labelfuse` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod fuse;
pub mod metrics;
pub mod model;
pub mod review;
pub mod unify;

pub use fuse::{fuse_dataset, FusionConfig, FusionOutput, FusionReport, FusionStrategy, Route};
pub use metrics::{evaluate, MetricsReport};
pub use model::{
    Annotation, BoundingBox, CategorySpec, Dataset, Detection, ImageKey, ImageRecord, LabelSpace, ModelError,
    Provenance, PseudoLabel, UnifiedDataset,
};
pub use review::{apply_decisions, Decision, ReviewItem, ReviewState, ReviewStatus};
pub use unify::{build_unified_space, AliasMap, RemapTable};
