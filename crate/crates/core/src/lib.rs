//! Fourier-domain convolution and capsule networks for classifying crop
//! stress from vegetation-index time series.

pub mod bench;
pub mod capsule;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod explain;
pub mod ffc;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod s2;
pub mod synth;
pub mod vi;

pub use error::{Error, Result};
