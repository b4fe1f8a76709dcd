//! Real-time control: style selection, trajectory blending, the
//! autoregressive step, contact IK and the live session server.

mod controller;
mod ik;
mod protocol;
mod server;
mod style;
mod trajectory;

pub use controller::*;
pub use ik::*;
pub use protocol::*;
pub use server::*;
pub use style::*;
pub use trajectory::*;
