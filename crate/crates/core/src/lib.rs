//! Certified worst-case output error for weight-quantized networks.
//!
//! Given a network `R_θ` and a quantized copy `R_θ'` that shares its biases,
//! this crate computes upper bounds on
//!
//! ```text
//! sup_{x ∈ [-D, D]^N0} ‖R_θ(x) − R_θ'(x)‖∞  ≤  C · ‖θ − θ'‖∞
//! ```
//!
//! from exact per-layer ∞-operator norms. Convolutions are handled through
//! their implicit block-Toeplitz structure and residual/bottleneck blocks
//! through an equivalent sequence of structured stage matrices.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the command
//! line driver live in the `qbound` crate.
//!
//! # Modules
//!
//! - [`tensor`]: dense row-major storage and the exact ∞-operator norm
//! - [`model`]: layer and network descriptions, validation, built-in MLPs
//! - [`conv`]: convolution geometry, direct convolution and its adjoint
//! - [`norms`]: per-stage operator norms and the [`NormProfile`]
//! - [`logspace`]: magnitudes stored as base-10 logarithms
//! - [`bounds`]: the bound formulas, ratios and the layerwise decomposition
//! - [`quantize`]: floor / round / adaptive rounding and cross-layer equalization
//! - [`infer`]: forward pass, sampling and empirical error estimation

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bounds;
pub mod conv;
pub mod error;
pub mod infer;
pub mod logspace;
mod math;
pub mod model;
pub mod norms;
pub mod quantize;
pub mod tensor;

pub use bounds::{BoundKind, BoundReport};
pub use error::{Error, Result};
pub use logspace::Log10;
pub use model::{ActivationKind, LayerSpec, Network, NetworkSpec};
pub use norms::NormProfile;
pub use quantize::{QuantConfig, RoundingMode};
pub use tensor::Tensor;
