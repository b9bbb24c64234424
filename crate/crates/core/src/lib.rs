//! Weakly supervised vision-language detection toolkit for chest x-rays.
//!
//! The crate covers the parts of the pipeline that work without the trained
//! network: turning reports into referring expressions, handling COCO
//! annotations and splits, decoding per-class probability maps into boxes,
//! tuning decoder thresholds with a tree-structured Parzen estimator,
//! scoring detections by IOU, and reference implementations of the map and
//! language heads with gradient checks.

pub mod annotation_store;
pub mod error;
pub mod eval_harness;
pub mod map_decoder;
pub mod numeric_heads;
pub mod report_parser;
pub mod tpe_tuner;

pub use error::{Error, Result};
