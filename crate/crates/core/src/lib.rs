//! Inductive conformal prediction for tensor-valued (spatio-temporal)
//! surrogate models.
//!
//! The crate is split along the pipeline it supports:
//!
//! - [`tensor`]: the rank-4 field type and its `CPT1` binary format
//! - [`sampling`]: seeded random streams and Latin-hypercube designs
//! - [`solvers`]: Poisson, convection-diffusion and wave solvers plus IVP windowing
//! - [`neural`]: small MLP surrogates, losses, Adam and MC dropout
//! - [`conformal`]: non-conformity scores, cell-wise quantiles, bands, coverage
//! - [`harness`]: experiment configs, the staged pipeline, reports and plots
//!
//! Calibration is performed independently for every cell of the output
//! tensor, so the coverage guarantee `P(L <= y <= U) >= 1 - alpha` holds
//! marginally per cell under exchangeability of calibration and test pairs.

pub mod conformal;
pub mod digest;
pub mod error;
pub mod harness;
pub mod neural;
pub mod sampling;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, FieldStack, FieldTensor};
