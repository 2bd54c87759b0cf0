//! Capsule-network engine: a small dense-tensor autograd core plus the
//! capsule-specific layers (squash, affine predictions, dynamic routing),
//! full model assembly for the baseline CapsNet / QCN / QCN+ variants,
//! losses, an Adam optimizer, dataset transforms, and a checkpoint codec.
//!
//! The crate is `no_std` (alloc required). Everything that touches the
//! filesystem, the clock, or a terminal lives in the companion CLI crate.
//!
//! Layout:
//! - [`tensor`] — dense row-major f32/f64 tensors
//! - [`graph`] — eager reverse-mode autograd tape and its operations
//! - [`gradcheck`] — central-difference gradient oracle (runs in f64)
//! - [`capsule`] — squash, prediction transform, dynamic routing, primary caps
//! - [`model`] — model configs, builders, decoders, masking, parameter counts
//! - [`loss`] — margin loss, reconstruction loss, total loss
//! - [`optim`] — Adam
//! - [`data`] — in-memory datasets, padding, affine warps, batching
//! - [`checkpoint`] — parameter serialization (byte-level; IO-free)

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod capsule;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;

mod conv;
mod matmul;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Element, Tensor};

/// Guard added inside every L2 norm and squash so the square root stays
/// differentiable at the origin. Invisible at 1e-4 scale relative to
/// activations.
pub const EPS_NORM: f64 = 1e-8;
