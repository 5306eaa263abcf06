//! Command-line driver: config parsing, the `integrate`, `render`, `bench`
//! and `ray-dump` commands, and a small raster plotter.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use error::CliError;
