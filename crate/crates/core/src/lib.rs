//! Blending-artifact dataset synthesis, compositing back-ends and a
//! frame-to-video detector evaluation harness.

pub mod blend;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod par;
pub mod pipeline;
pub mod probes;
pub mod raster;
pub mod sbi;
pub mod seam;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
