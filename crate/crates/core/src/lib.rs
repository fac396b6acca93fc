pub mod cli;
pub mod continuum;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod loss;
pub mod nn;

pub use error::{Error, Result};
