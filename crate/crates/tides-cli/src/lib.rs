//! Orchestration behind the `tides` command-line tool.
//!
//! Each subcommand is a pure function from a config plus input paths to an
//! artifact directory containing its outputs and exactly one
//! `manifest.json`. All randomness is seeded, so rerunning a command with
//! an equal manifest reproduces its outputs byte for byte.

pub mod config;
pub mod manifest;
pub mod pipeline;
