//! File formats, experiment pipelines and the command-line front end.

pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod plot;

pub use error::{Error, Result};
