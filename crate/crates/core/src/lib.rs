//! TSDF-bounded sample placement for volume rendering of signed distance
//! fields.
//!
//! A dense truncated-SDF grid is fused from depth maps of training views.
//! At render time each ray walks the grid to find a tight `[t_near, t_far]`
//! interval around its first surface, and a small, length-proportional
//! number of samples is placed inside it. Rays whose bounded render comes
//! out too transparent are re-rendered over the full range.
//!
//! Scenes are analytic (spheres, boxes, half-spaces, optional value noise),
//! so every quantity has an exact reference.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod image;
pub mod io;
pub mod presets;
pub mod render;
pub mod sampling;
pub mod tsdf;

pub use error::{DomainError, Error, Result};
