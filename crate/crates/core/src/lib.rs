//! Parametrized sinc filterbank front-end for raw-waveform classifiers.
//!
//! The first layer of the classifier convolves raw audio with windowed-sinc
//! band-pass filters whose only learnable parameters are the per-filter low
//! cutoff and bandwidth. Everything is trained by explicit backpropagation
//! with analytic tap derivatives, so the whole model is finite-difference
//! checkable. The crate also ships the analysis tools used to inspect what
//! the filterbank learned: per-filter and cumulative frequency responses,
//! noisy-band avoidance traces, and sentence-level voting.

pub mod analysis;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod conv;
pub mod data;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod model;

pub use error::{Error, Result};
