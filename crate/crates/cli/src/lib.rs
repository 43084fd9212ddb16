//! Command-line and HTTP front ends for the `gaswait` library.

pub mod commands;
pub mod server;

pub use commands::{run, Cli};
