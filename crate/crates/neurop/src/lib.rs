//! Files, configuration and the experiment pipeline around `neurop-core`.
//!
//! - [`dataset_file`]: the `NOPD` dataset format and its sidecar manifest.
//! - [`checkpoint`]: the `NOCK` checkpoint format.
//! - [`config`]: TOML experiment configs.
//! - [`experiment`]: gen-data, pretrain, finetune, scratch, eval and report.

pub mod checkpoint;
pub mod config;
pub mod dataset_file;
pub mod error;
pub mod experiment;
mod io;

use std::time::Instant;

pub use error::{CliError, Result};

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl neurop_core::train::Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
