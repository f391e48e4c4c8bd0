//! File formats, the command-line front end, and the experiment harness
//! around `nuclei-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod plot;

pub use error::{Error, Result};
