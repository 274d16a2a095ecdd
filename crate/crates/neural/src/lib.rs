//! Differentiable compute for the actor and map branches: a reverse-mode
//! tape, grid deformable attention, set cross-attention, decoding heads,
//! the two-branch pipeline, toy training and finite-difference checks.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
