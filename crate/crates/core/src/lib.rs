//! Geometry, rasterization, matching, losses, targets, evaluation and scene
//! I/O for map-element prediction from actor trajectories.

pub mod assignment;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod targets;

pub use error::{Error, Result};
