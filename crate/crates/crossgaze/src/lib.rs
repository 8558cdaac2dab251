//! Dual-encoder 3D gaze estimation, desk scale and from scratch.
//!
//! The crate provides a dense-tensor engine with reverse-mode automatic
//! differentiation, the neural building blocks of a dual-encoder gaze
//! network (face encoder, shared eye encoder, cross-attention fusion, MLP
//! head), gaze geometry and angular-error metrics, a deterministic synthetic
//! dataset generator with an on-disk format, and training, evaluation,
//! checkpointing and ablation tooling. Everything is seeded: identical
//! inputs produce bit-identical outputs, files and reports.

pub mod audit;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
