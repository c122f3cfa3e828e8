//! Command implementations behind the `dassf` binary.

pub mod bench;
pub mod commands;
