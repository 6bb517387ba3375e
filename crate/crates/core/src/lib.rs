//! Synthesis of labeled cardiac MR slices.
//!
//! An anatomical VAE samples cardiac label maps and a SPADE-conditioned GAN
//! renders an MR slice for each. The pairs train a compact encoder-decoder
//! segmenter, scored with per-class Dice.

pub mod anatomy;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod nn;
pub mod rng;
pub mod segmentation;
pub mod spadegan;
pub mod vae;

pub use error::{Error, Result};
