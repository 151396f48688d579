pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod reasoner;
pub mod synth;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
