//! Bearing fault diagnosis from multi-scale spectral images.
//!
//! * [`dsp`]: FFT, DFT oracle and vector utilities.
//! * [`features`]: segmentation and MSSI image construction.
//! * [`nn`]: the convolutional network and its optimizer.
//! * [`pipeline`]: dataset split, training, evaluation and the ten-trial protocol.
//! * [`synth`]: synthetic bearing vibration signals.
//! * [`io`]: signal files, manifests, feature caches and model files.

pub mod dsp;
pub mod error;
pub mod features;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
