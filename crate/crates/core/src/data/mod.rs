//! Dataset manifests and per-style training sets.

mod dataset;
mod manifest;

pub use dataset::*;
pub use manifest::*;
