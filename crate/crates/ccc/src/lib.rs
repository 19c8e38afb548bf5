//! Files, datasets and the `ccc` command-line pipeline on top of
//! [`ccc_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod io;

pub use error::{Error, Result};
