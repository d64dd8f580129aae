//! Multi-cue phrase grounding and visual relationship detection over
//! precomputed region and phrase features.

pub mod assets;
pub mod classify;
pub mod cues;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod infer;
pub mod learn;
pub mod lingcue;
pub mod phrase;
pub mod ppc;
pub mod vrd;

pub use error::{Error, Result};
