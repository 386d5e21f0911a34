//! BFTrans: a bidirectional fusion transformer tracker.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense f32/f64 tensors, a recording autodiff graph, the
//!   parameter store with the `BFT1` checkpoint format, and a
//!   finite-difference gradient checker.
//! - [`backbone`]: strided CNN feature extractor with stage alignment and
//!   pixel-wise cross-correlation.
//! - [`tape`]: target-aware positional encoding (channel and spatial
//!   attention weights combined through a learnable residual).
//! - [`fusion`]: linear self- and cross-attention fusion streams.
//! - [`heads`]: anchor-free classification/regression heads and the
//!   focal + l1 + GIoU training objective.
//! - [`model`]: assembles the above into the five ablation variants.
//! - [`tracker`]: online tracking loop (crop, infer, decode, clamp).
//! - [`data`]: synthetic sequence generation, PPM I/O, training pairs.
//! - [`train`]: AdamW loop with two learning-rate groups and step decay.
//! - [`eval`]: one-pass-evaluation success/precision metrics.

pub mod ablate;
pub mod backbone;
pub mod bbox;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod heads;
mod layers;
pub mod model;
pub mod selftest;
pub mod tape;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
