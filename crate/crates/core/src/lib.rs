//! Interval time prediction on temporal knowledge graphs with temporal
//! logical rules learned over an event graph.

pub mod dataset;
pub mod density;
pub mod error;
pub mod graph;
pub mod learner;
pub mod metrics;
pub mod miner;
pub mod pipeline;
pub mod predictor;
pub mod synth;
pub mod time;
pub mod tkg;

pub use error::{Error, Result};
