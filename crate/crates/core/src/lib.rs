pub mod autodiff;
pub mod compositor;
pub mod eval;
mod error;
pub mod geometry;
pub mod multires;
pub mod network;
pub mod pipeline;
pub mod scenegen;
pub mod trainer;

pub use error::{Error, Result};
