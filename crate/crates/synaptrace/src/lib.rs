//! File formats, the synthetic benchmark driver and the `synaptrace`
//! command line on top of [`synaptrace_core`].

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod pipeline;
pub mod report;
pub mod storage;

pub use cli::run_cli;
pub use error::{Error, Result};
pub use synaptrace_core as core;
