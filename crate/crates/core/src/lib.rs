//! Label shift between domains measured as optimal transport on the label
//! simplex, with exact, entropic and semi-dual solvers, synthetic Gaussian
//! mixture domains, bound checks, and a small adaptation trainer.

// `!(x > 0.0)` rejects NaN as well as non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Matrix kernels index rows and columns together.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod experiment;
pub mod labelshift;
pub mod ldrot;
pub mod matrix;
pub mod mixture;
pub mod nn;
pub mod ot;
pub mod simplex;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use simplex::{GroundMetric, ProbVector};
