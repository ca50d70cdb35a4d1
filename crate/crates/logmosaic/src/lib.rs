//! File formats, a multi-threaded runtime and the command-line front end for
//! `logmosaic-core`.

pub mod bench;
pub mod cli;
pub mod io;
pub mod report;
pub mod runtime;
pub mod synth_export;

pub use logmosaic_core as core;
