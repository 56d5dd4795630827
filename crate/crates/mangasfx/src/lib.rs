//! File formats, dataset builder, trainer, generator and evaluator for the
//! manga sound-effect stylization pipeline. Pure computation lives in
//! `mangasfx-core`.

pub mod backends;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod events;
pub mod generate;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod sources;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
