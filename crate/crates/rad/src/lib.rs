//! File formats, the experiment grid and the `rad` command-line tool built on
//! [`rad_core`].

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod featfile;
pub mod manifest;
pub mod report;

pub use error::{RadError, Result};
