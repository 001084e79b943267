#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod model;
pub mod molgraph;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
