//! Local motion phases: contact and principal-component source functions,
//! conditioning, per-frame sinusoid fits and velocity-scaled features.

mod condition;
mod contacts;
mod features;
mod filter;
mod fit;
mod pipeline;
mod source;
mod svg;

pub use condition::*;
pub use contacts::*;
pub use features::*;
pub use filter::*;
pub use fit::*;
pub use pipeline::*;
pub use source::*;
pub use svg::*;
