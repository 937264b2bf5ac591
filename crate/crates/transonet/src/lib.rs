//! Disk formats, reports, synthetic cohorts and the command-line front end
//! around `transonet-core`.

pub mod checkpoint;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod overlay;
pub mod report;
pub mod volume_io;

pub use error::{Error, Result};
