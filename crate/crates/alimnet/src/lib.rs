//! Class-conditional adversarial synthesis of Persian classical music
//! spectrograms at desk scale.
//!
//! The pipeline: fixed-length audio clips are analyzed with a short-time
//! Fourier transform into 256x256 time-frequency matrices, an auxiliary
//! classifier GAN (conv/GRU discriminator, upsampling-conv generator) is
//! trained on labeled spectrograms, and generated spectrograms are turned
//! back into audio with Griffin-Lim phase estimation and the inverse
//! transform.
//!
//! Everything is deterministic given seeds; all neural network math runs
//! on a small reverse-mode engine in [`diffcore`] with built-in
//! finite-difference verification.

pub mod container;
pub mod data;
pub mod diffcore;
pub mod dsp;
mod error;
pub mod labels;
pub mod models;
pub mod synth;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
