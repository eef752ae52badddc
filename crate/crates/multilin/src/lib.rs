//! Mode-wise analysis of batches of third-order activation tensors.
//!
//! The crate decomposes a batch of `C×H×W` tensors into one orthonormal
//! basis per mode (channel, height, width), builds additive edit tensors
//! from sparse selections of those basis vectors, including multiplicative
//! cross-mode mixing terms, and learns a Tucker-structured regression that
//! maps edit tensors to directions in a low-dimensional latent space.
//!
//! The pieces fit together as a pipeline:
//!
//! 1. [`mpca::compute_bases`] turns an [`mpca::ActivationBatch`] into a
//!    [`mpca::MultilinearBasis`] (one factor matrix per mode).
//! 2. [`edits::assemble_edit_tensor`] combines selected basis columns into
//!    an edit tensor.
//! 3. [`regression::fit`] learns [`regression::TuckerWeights`] mapping
//!    activations back to latent codes, so
//!    [`regression::direction_to_latent`] can translate an edit tensor
//!    into a latent-space direction.
//! 4. [`synth`] provides a synthetic generator with known ground truth and
//!    the mean-off-diagonal disentanglement metric used to validate the
//!    whole chain.
//!
//! The `multilin` binary wires these stages to NPY files on disk; see the
//! guide for a walk-through.

pub mod edits;
mod error;
pub mod linalg;
pub mod mpca;
pub mod npy;
pub mod pipeline;
pub mod regression;
pub mod synth;
pub mod tensor;

pub mod guide;

pub use error::{Error, Result};
pub use tensor::{Matrix, Mode, Tensor, TensorShape3};
