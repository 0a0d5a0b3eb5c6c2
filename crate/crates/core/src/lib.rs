//! Core of the `snlforge` toolchain.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (an allocator is required):
//!
//! * [`model`]: linear layer-graph IR, shape inference, inference-time
//!   normalization and the four built-in benchmark networks.
//! * [`fixed`]: bit-exact signed fixed-point arithmetic.
//! * [`qsim`]: floating-point reference and bit-exact quantized inference.
//! * [`plan`]: the fused streaming-stage plan shared by code generation,
//!   performance modeling and simulation.
//! * [`codegen`]: deterministic HLS-style project emission with a runtime
//!   register map for weights.
//! * [`perf`]: closed-form latency and resource estimates.
//! * [`sim`]: cycle-level streaming pipeline simulator with register-based
//!   weight loading.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codegen;
pub mod digest;
mod error;
pub mod fixed;
pub mod model;
pub mod perf;
pub mod plan;
pub mod qsim;
pub mod sim;

pub use error::{Error, Result};
pub use fixed::{FixedFormat, FixedValue, Overflow, Rounding};
pub use model::{LayerKind, LayerSpec, ModelGraph, TensorShape};
