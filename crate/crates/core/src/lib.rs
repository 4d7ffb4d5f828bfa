pub mod constants;
pub mod error;
pub mod estimation;
pub mod heterodyne;
pub mod model;
pub mod simulator;
pub mod spectral;
pub mod optimize;

pub mod dsp;
pub mod trace;
pub mod traceio;

pub use error::{Error, Result};
