//! File formats, configuration and command implementations behind the
//! `ucodec` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod wav;

pub use error::{CliError, Result};
