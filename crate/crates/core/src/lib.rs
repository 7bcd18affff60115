//! Visual-linguistic agent pipeline.
//!
//! A detector (the visual agent) proposes boxes, a language model (the
//! linguistic agent) reviews them against a scene caption, and a region
//! classifier relabels the detections that were flagged as implausible.
//! This crate holds the domain model, the COCO file boundary, the prompt
//! protocol, deterministic oracle agents, the per-image pipeline, the
//! COCO-style evaluator, and the IoU-weighted entropy analysis.

pub mod coco;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod prompt;
pub mod synth;

pub use error::{AgentError, Error, Result};
pub use model::{
    BoundingBox, Category, CategoryMap, DetId, Detection, GroundTruthObject, ImageId, SceneRecord, Stage, StageEntry,
};
