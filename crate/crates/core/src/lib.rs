//! Relaxed layer-wise equivariance with symmetry learned by Laplace
//! marginal-likelihood optimisation.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure computation:
//! dense tensors with reverse-mode differentiation, finite groups acting on
//! grids, the pathway layer zoo (FC, F-FC, S-FC, CONV, S-CONV, GCONV,
//! PGCONV), Gaussian symmetry priors, Kronecker-factored curvature, the
//! Laplace objective and the alternating training loop. File formats, the
//! CLI and threading live in the `symmetria` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod checks;
pub mod curvature;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod groups;
pub mod laplace;
pub mod layers;
pub mod linalg;
pub mod math;
pub mod optim;
pub mod oracle;
pub mod parallel;
pub mod priors;
pub mod report;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
