//! Mixer-TTS: a non-autoregressive text-to-mel-spectrogram model built on
//! MLP-Mixer style blocks, with an unsupervised monotonic aligner, pitch and
//! duration predictors, optional language-model token conditioning, and the
//! training machinery around it.
//!
//! Everything runs on the small autodiff core in [`numerics`].

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Float, Tape, Tensor};
pub mod adaptors;
pub mod aligner;
pub mod audio_text;
pub mod config;
pub mod lm_cond;
pub mod mixer;
pub mod model;
pub mod params;
pub mod suites;
pub mod synthetic;
pub mod training;
pub mod verify;
