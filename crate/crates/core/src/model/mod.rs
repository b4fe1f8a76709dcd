//! The style network: gating over expert weight sets, a style modulator
//! (clip-driven scale/shift generator or per-style baselines), losses,
//! training, fine-tuning, parameter accounting and checkpoints.

mod check;
mod checkpoint;
mod config;
mod loss;
mod network;
mod train;

pub use check::*;
pub use checkpoint::*;
pub use config::*;
pub use loss::*;
pub use network::*;
pub use train::*;
