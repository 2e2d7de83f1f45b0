//! CPU emulation of SageAttention: tiled softmax attention with INT8
//! dynamic quantization of Q and K, K smoothing, and an emulated binary16
//! accumulator for the `P̃ V` product, plus the accuracy tooling around it.
//!
//! Module map:
//! - [`numerics`]: binary16 / FP8 rounding and accumulated matmuls
//! - [`quant`]: quantizers, K smoothing, the static numerator scale
//! - [`attention`]: the oracle, the FlashAttention baseline and the kernels
//! - [`metrics`] and [`adaptive`]: accuracy metrics and per-layer selection
//! - [`io`], [`report`], [`commands`]: tensor files, synthetic data, CLI backends

pub mod adaptive;
pub mod commands;
pub mod attention;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod quant;
pub mod report;
pub mod tensor;

pub use attention::{AttentionInput, KernelConfig, KernelVariant};
pub use tensor::{Matrix, Shape4, Tensor4};
