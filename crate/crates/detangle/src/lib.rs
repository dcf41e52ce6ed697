pub mod commands;
pub mod config;
pub mod corpus;
pub mod diffgraph;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod loss;
pub mod manifest;
pub mod mat;
pub mod report;
pub mod seeds;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
