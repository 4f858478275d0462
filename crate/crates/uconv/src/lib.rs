//! Log-mel feature extraction, file formats, latency benchmarking and the
//! command-line interface for the `uconv-core` encoders.

pub mod audio;
pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
