//! Motion clips, skeletons and the per-frame feature vectors fed to the
//! synthesis network.

mod bvh;
mod clip;
mod container;
mod features;
mod mirror;
mod normalize;
mod skeleton;
mod synth;

pub use bvh::*;
pub use clip::*;
pub use container::*;
pub use features::*;
pub use mirror::*;
pub use normalize::*;
pub use skeleton::*;
pub use synth::*;
