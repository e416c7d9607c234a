//! File formats and the command-line interface around [`pullback_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod model_file;
pub mod report;

pub use error::{Error, Result};
