//! Column-sampling approximations of symmetric positive semidefinite kernel
//! matrices.
//!
//! A kernel matrix is reached through [`kernel::KernelMatrix`], an oracle that
//! hands out column blocks and counts every entry it evaluates. Columns are
//! chosen by the samplers in [`sampling`], turned into factored
//! approximations `C U Cᵀ` (optionally plus `δ I`) by [`models`], and
//! consumed by the solvers in [`downstream`].
//!
//! Data-parallel inner loops go through rayon when the `parallel` feature is
//! on (the default) and run sequentially otherwise.

pub mod downstream;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod models;
pub mod par;
pub mod sampling;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
