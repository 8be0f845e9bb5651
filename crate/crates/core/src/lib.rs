//! Modal-music (Dastgah) classification toolkit.

pub mod audio_io;
pub mod dsp;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
