//! Reality-conforming LiDAR scene synthesis.
//!
//! The crate covers the full data path for composition-based LiDAR
//! augmentation: reading and writing point clouds and labels, extracting an
//! object bank from ground truth, estimating per-point placeability (a
//! sector plane-fit labeler plus a trainable Fourier-feature MLP), placing
//! objects into scenes under distance / observing-angle / heading / height
//! / collision constraints, scheduling per-category insertion counts over
//! a training run, and computing the diagnostic statistics that motivate
//! those constraints.

pub mod analytics;
pub mod compose;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod ground;
pub mod pipeline;
pub mod placeability;
pub mod schedule;

pub use error::{Error, Result};
