//! Host side of the `snlforge` toolchain: the `snlx-1` model and dataset
//! files, calibration and device-profile configs, the benchmark sweep and its
//! reports, and the virtual-board TCP service with its client.
//!
//! All computation lives in [`snlforge_core`], re-exported here as [`core`].

pub use snlforge_core as core;

pub mod bench;
pub mod client;
pub mod config;
pub mod protocol;
pub mod report;
pub mod server;
pub mod snlx;

use snlforge_core::model::{builtin, ModelGraph};

/// A builtin benchmark name (`jet`, `anomaly`, `kws`, `vww`) or a path to an
/// `snlx-1` manifest.
pub fn resolve_model(spec: &str) -> Result<ModelGraph, snlx::SnlxError> {
    match builtin(spec) {
        Some(g) => Ok(g),
        None => snlx::load_model(spec),
    }
}
