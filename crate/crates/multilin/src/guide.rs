//! The user guide, one module per chapter. Each chapter is the same
//! Markdown the book is built from, so its code blocks compile and run as
//! doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensor-algebra.md")]
pub mod tensor_algebra {}

#[doc = include_str!("../../../book/src/multilinear-pca.md")]
pub mod multilinear_pca {}

#[doc = include_str!("../../../book/src/edit-tensors.md")]
pub mod edit_tensors {}

#[doc = include_str!("../../../book/src/tensor-regression.md")]
pub mod tensor_regression {}

#[doc = include_str!("../../../book/src/synthetic-evaluation.md")]
pub mod synthetic_evaluation {}

#[doc = include_str!("../../../book/src/cli-pipeline.md")]
pub mod cli_pipeline {}
