//! File formats, review store, HTTP service and pipeline stages around
//! [`labelfuse_core`].

pub mod config;
pub mod ingest;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod server;
pub mod store;

pub use labelfuse_core as core;
