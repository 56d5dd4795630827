//! Core of the manga sound-effect stylization pipeline.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std` (only `alloc`). File formats, the dataset builder and the
//! command line live in the `mangasfx` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod composite;
pub mod dataset;
pub mod flow;
pub mod glyphs;
pub mod incontext;
pub mod metrics;
pub mod raster;
pub mod rgba;

pub use error::{Error, Result};
