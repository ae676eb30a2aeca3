//! Numerical kernels for multi-scale average-pooling context modules.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! * [`tensor`]: dense `h x w x c` feature maps, convolution weights and
//!   named weight banks.
//! * [`rng`]: splitmix64-driven reproducible test tensors.
//! * [`pooling`]: stride-1 dilated sum/average pooling, border count maps,
//!   and the direct and cascaded pooling pyramids.
//! * [`conv`]: dilated same-padding convolution, align-corners bilinear
//!   upsampling and spatial broadcast.
//! * [`context`]: ASPP-style and vortex pooling context modules, the
//!   image-level branch and the segmentation head.
//! * [`grad`]: adjoints of every linear operator above plus a central
//!   finite-difference checker.
//! * [`analysis`]: dependency footprints, utilization ratios and operation
//!   counts.
//! * [`verify`]: seeded equivalence and gradient suites shared by the CLI
//!   and the test harness.
//!
//! File formats, benchmarking and the command line live in the
//! `vortex-pool` companion crate.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod context;
pub mod conv;
mod error;
pub mod grad;
pub mod pooling;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{concat_channels, DType, FeatureMap, WeightBank, WeightTensor};
