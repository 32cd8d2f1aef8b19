//! File formats, parallel curation, diagnostics and the command-line driver
//! built on `smited-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod curate;
pub mod diagnostics;
pub mod error;
pub mod formats;
pub mod vocab_io;

pub use error::{Category, Error, Result};
