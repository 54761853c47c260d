//! Distributed SO(2)-equivariant graph neural network for predicting
//! block-sparse Hamiltonian matrices of periodic atomic structures.
//!
//! The crate is organised bottom-up:
//!
//! - [`structures`]: periodic structures, extended-XYZ I/O, radius graphs, tiling.
//! - [`harmonics`]: real spherical harmonics, Wigner-D matrices, edge alignment
//!   rotations and Clebsch-Gordan coupled/uncoupled transforms.
//! - [`model`]: the message-passing network, its loss and hand-written reverse pass.
//! - [`partition`]: Low-NN recursive bisection, a min-cut baseline and quality metrics.
//! - [`runtime`]: communication plans, halo exchange and multi-rank forward/training.

pub mod error;
pub mod harmonics;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod real;
pub mod runtime;
pub mod structures;

pub use error::{Error, Result};
pub use real::Real;
