//! Building blocks for detecting tumor metastases on gigapixel slide images.
//!
//! The pipeline runs around a pluggable patch classifier:
//!
//! 1. [`slide_store`] reads tiled slide pyramids, masks and manifests.
//! 2. [`patch_pipeline`] filters background, labels patches, samples balanced
//!    training patches and augments them.
//! 3. [`classifier`] defines the classifier contract with oracle, constant,
//!    ensemble and a small trainable model.
//! 4. [`heatmap_engine`] slides the classifier over a slide at stride 128.
//! 5. [`detection_metrics`] turns heatmaps into detections and scores them
//!    with FROC and slide-level ROC AUC, including bootstrap intervals.
//!
//! [`color_norm`] implements stain normalization in HSD color space.

pub mod classifier;
pub mod color_norm;
pub mod detection_metrics;
pub mod error;
pub mod heatmap_engine;
pub mod image;
pub mod patch_pipeline;
pub mod seeds;
pub mod slide_store;

pub use error::{Error, ErrorClass, LoadError, Result};
pub use image::{Patch, Rgb8Image, RgbImage};
