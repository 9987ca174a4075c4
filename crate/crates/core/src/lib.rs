//! Dynamic tomographic reconstruction of strongly scattering layered phase
//! objects: multi-slice BPM simulation, gradient-descent approximants, a
//! split-convolutional recurrent reconstructor and evaluation metrics.

pub mod approximant;
pub mod bpm;
pub mod error;
pub mod fft;
pub mod grid;
pub mod metrics;
pub mod net;
pub mod pipeline;

pub use error::{Error, Result};
