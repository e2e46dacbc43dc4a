use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::band::PredictionBand;
use super::score::Method;
use super::stats::{coverage_beta, CoverageLaw};
use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, FieldStack, FieldTensor};

/// Probability mass of the reference interval reported with coverage.
pub const BETA_MASS: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub method: Method,
    pub alpha: f64,
    pub n_cal: usize,
    pub n_val: usize,
    /// Fraction of validation samples inside the band, per cell.
    pub per_cell_coverage: FieldTensor,
    pub mean_coverage: f64,
    /// Mean `U - L` over finite-width intervals.
    pub tightness: f64,
    /// Number of (sample, cell) intervals of infinite width.
    pub n_infinite: usize,
    /// Coverage law at `(n_cal, alpha)`; absent for uncalibrated bands.
    pub law: Option<CoverageLaw>,
}

/// Scalar part of a [`CoverageReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub method: Method,
    pub alpha: f64,
    pub n_cal: usize,
    pub n_val: usize,
    pub mean_coverage: f64,
    pub min_cell_coverage: f64,
    pub max_cell_coverage: f64,
    pub tightness: f64,
    pub n_infinite: usize,
    pub beta_lo: Option<f64>,
    pub beta_hi: Option<f64>,
}

impl CoverageReport {
    pub fn beta_interval(&self) -> Option<(f64, f64)> {
        self.law.map(|l| (l.lo, l.hi))
    }

    pub fn summary(&self) -> CoverageSummary {
        let cells = self.per_cell_coverage.data();
        CoverageSummary {
            method: self.method,
            alpha: self.alpha,
            n_cal: self.n_cal,
            n_val: self.n_val,
            mean_coverage: self.mean_coverage,
            min_cell_coverage: cells.iter().copied().fold(f64::INFINITY, f64::min),
            max_cell_coverage: cells.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            tightness: self.tightness,
            n_infinite: self.n_infinite,
            beta_lo: self.law.map(|l| l.lo),
            beta_hi: self.law.map(|l| l.hi),
        }
    }
}

/// Per-cell fraction of `truth` samples with `L <= y <= U`, its mean over
/// cells, and the mean finite band width.
pub fn empirical_coverage(band: &PredictionBand, truth: &FieldStack) -> Result<CoverageReport> {
    if !band.lower.same_shape(truth) || !band.upper.same_shape(truth) {
        return Err(Error::shape(format!(
            "band of {} x {} vs truths of {} x {}",
            band.n_samples(),
            band.lower.sample_dims(),
            truth.n_samples(),
            truth.sample_dims()
        )));
    }
    let n_val = truth.n_samples();
    if n_val == 0 {
        return Err(Error::shape("no validation samples"));
    }
    let cells = truth.cells();
    let (lo, hi, y) = (band.lower.data(), band.upper.data(), truth.data());

    // (covered count, finite width sum, finite width count) per cell
    let per_cell: Vec<(usize, f64, usize)> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let (mut covered, mut width, mut finite) = (0usize, 0.0, 0usize);
            for i in (c..y.len()).step_by(cells) {
                if lo[i] <= y[i] && y[i] <= hi[i] {
                    covered += 1;
                }
                let w = hi[i] - lo[i];
                if w.is_finite() {
                    width += w;
                    finite += 1;
                }
            }
            (covered, width, finite)
        })
        .collect();

    let coverage: Vec<f64> = per_cell.iter().map(|p| p.0 as f64 / n_val as f64).collect();
    let mean_coverage = pairwise_sum(&coverage) / cells as f64;
    let width_sums: Vec<f64> = per_cell.iter().map(|p| p.1).collect();
    let n_finite: usize = per_cell.iter().map(|p| p.2).sum();
    let tightness = if n_finite == 0 {
        0.0
    } else {
        pairwise_sum(&width_sums) / n_finite as f64
    };
    let law = if band.n_cal == 0 {
        None
    } else {
        Some(coverage_beta(band.n_cal, band.alpha, BETA_MASS)?)
    };
    Ok(CoverageReport {
        method: band.method,
        alpha: band.alpha,
        n_cal: band.n_cal,
        n_val,
        per_cell_coverage: FieldTensor::new(truth.sample_dims(), coverage)?,
        mean_coverage,
        tightness,
        n_infinite: n_val * cells - n_finite,
        law,
    })
}
