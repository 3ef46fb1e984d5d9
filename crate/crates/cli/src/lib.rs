//! File formats, run documents, report writers, and the command
//! implementations behind the `softlabel` binary.

pub mod commands;
pub mod config;
pub mod errors;
pub mod formats;
pub mod reports;
