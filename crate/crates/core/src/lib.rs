//! Pixel-level label synthesis from class activation maps.
//!
//! The crate turns per-class score maps (CAMs) plus image-level class sets into
//! dense segmentation labels:
//!
//! 1. [`cam`] normalizes score maps, builds the background map and assigns labels.
//! 2. [`afflabels`] extracts confident regions and enumerates radius-limited pixel pairs.
//! 3. [`model`] trains a small convolutional affinity head on those pairs.
//! 4. [`walk`] propagates score maps along learned affinities with a random walk.
//! 5. [`eval`] scores the resulting labels (precision/recall and mIoU).
//!
//! [`dataset`] handles DeepGlobe-style directories, tiling and the seeded synthetic
//! scene generator; [`pipeline`] chains every stage behind file-based boundaries.

pub mod afflabels;
pub mod cam;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod palette;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod resample;
pub mod walk;
pub mod wcam;

pub use error::{Error, Result};
pub use raster::{ClassId, LabelMap, Plane, Raster, RasterData, ScoreStack, BACKGROUND, NEUTRAL};
