//! Command-line pipeline: ingest, variable construction, estimation, figure
//! data and simulation, with a manifest beside every output.

pub mod args;
pub mod commands;
pub mod error;
pub mod figures;
pub mod manifest;
pub mod report;
