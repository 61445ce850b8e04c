pub mod booster;
pub mod calibration;
pub mod cli;
pub mod crbridge;
pub mod data;
pub mod error;
pub mod explain;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod rating;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
