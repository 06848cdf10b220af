//! Spatio-temporal action proposals built from per-frame object detections.
//!
//! Detections are clustered into tubelet proposals, widened by temporal
//! jittering, labeled against ground truth for classifier training, refined
//! and deduplicated with 3D non-maximum suppression, and scored with
//! DET-style miss/false-alarm curves.

pub mod clustering;
pub mod config;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod jitter;
pub mod jsonl;
pub mod labeling;
pub mod nms;
pub mod pipeline;
pub mod proposal;
pub mod refine;
pub mod scoring;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::Cuboid;
