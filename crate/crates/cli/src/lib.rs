//! Library surface of the command-line toolchain, exposed so integration
//! tests can drive the same pipeline the binary runs.

pub mod commands;
pub mod config;
