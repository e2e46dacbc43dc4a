//! Inductive conformal prediction over field tensors.
//!
//! Every cell of the output tensor is calibrated on its own: scores of the
//! calibration set give a per-cell quantile `q`, which widens (or, for CQR,
//! possibly narrows) the model's output into a band with marginal coverage
//! at least `1 - alpha` in that cell.

mod band;
mod coverage;
mod quantile;
mod score;
pub mod stats;
mod sweep;

pub use band::{build_band, uncalibrated_band, BandInputs, PredictionBand};
pub use coverage::{empirical_coverage, CoverageReport, CoverageSummary, BETA_MASS};
pub use quantile::{conformal_quantile, QuantileField, SortedScores};
pub use score::{score_aer, score_cqr, score_std, Method, NonconformityMethod, ScoreTensor};
pub use stats::{coverage_beta, CoverageLaw};
pub use sweep::{alpha_grid, rows_from_csv, rows_to_csv, validation_sweep, SweepRow, SweepTable};
