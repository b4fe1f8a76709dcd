pub mod data;
pub mod error;
pub mod io;
pub mod model;
pub mod motion;
pub mod nn;
pub mod phase;
pub mod runtime;

pub use error::{Error, Result};
