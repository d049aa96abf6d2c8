//! Patch slimming for vision transformers at desk scale.
//!
//! The crate trains tiny transformers on synthetic token tasks, scores patch
//! significance by propagating attention through the deeper (already pruned)
//! layers, builds nested per-layer patch masks top-down under a reconstruction
//! error budget, and accounts multiply-accumulates analytically.
//!
//! Core math is generic over [`Scalar`] (`f32`/`f64`); the aliases below pin
//! the double-precision types used by the pipelines.

pub mod costmodel;
pub mod dynamic;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pruner;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
pub use model::{ForwardTrace, LayerParams, MaskSchedule, ModelConfig, ModelParams, PatchMask};
pub use numerics::{Matrix, Rng, Scalar, RNG_ALGORITHM};

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type ForwardTraceF64 = ForwardTrace<f64>;
