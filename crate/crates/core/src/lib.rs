//! Region proposal for mitotic counting on whole-slide images.
//!
//! Given a slide raster and a per-pixel mitotic activity map, the pipeline
//! finds the window the size of ten high power fields with the largest
//! summed activity, restricted to positions whose window is almost entirely
//! covered by tissue. Supporting modules render ground-truth maps from point
//! annotations, stitch patch-wise detector output, compute evaluation
//! metrics, sample training patches and generate synthetic slides with
//! known ground truth.

pub mod annotations;
pub mod cli;
pub mod density;
pub mod error;
pub mod geometry;
pub mod maskgen;
pub mod metrics;
pub mod proposal;
pub mod raster;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};

/// Full-resolution pixel coordinate `(x, y)`.
pub type Point = (u32, u32);
