use rayon::prelude::*;

use super::score::{Method, ScoreTensor};
use super::stats::conformal_rank;
use crate::error::{Error, Result};
use crate::tensor::{Dims, FieldTensor};

/// Per-cell conformal quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileField {
    pub q: FieldTensor,
    pub alpha: f64,
    pub n_cal: usize,
    pub method: Method,
}

impl QuantileField {
    /// Cells whose rank index overflowed.
    pub fn n_infinite(&self) -> usize {
        self.q.data().iter().filter(|v| v.is_infinite()).count()
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

fn gather_cell(data: &[f64], cells: usize, cell: usize) -> Vec<f64> {
    data.iter().skip(cell).step_by(cells).copied().collect()
}

/// `q = k`-th smallest score per cell, `k = ceil((n + 1)(1 - alpha))`;
/// `+Inf` when `k > n`.
pub fn conformal_quantile(scores: &ScoreTensor, alpha: f64) -> Result<QuantileField> {
    check_alpha(alpha)?;
    let n = scores.n_cal();
    if n == 0 {
        return Err(Error::shape("no calibration scores"));
    }
    let k = conformal_rank(n, alpha);
    let cells = scores.scores.cells();
    let data = scores.scores.data();
    let q: Vec<f64> = if k > n {
        vec![f64::INFINITY; cells]
    } else {
        (0..cells)
            .into_par_iter()
            .map(|c| {
                let mut col = gather_cell(data, cells, c);
                *col.select_nth_unstable_by(k - 1, f64::total_cmp).1
            })
            .collect()
    };
    Ok(QuantileField {
        q: FieldTensor::quantile(scores.scores.sample_dims(), q)?,
        alpha,
        n_cal: n,
        method: scores.method,
    })
}

/// Scores sorted once per cell, so that quantiles at many levels are lookups.
#[derive(Debug, Clone)]
pub struct SortedScores {
    method: Method,
    dims: Dims,
    n_cal: usize,
    /// Cell-major: cell `c` owns `sorted[c * n_cal..(c + 1) * n_cal]`.
    sorted: Vec<f64>,
}

impl SortedScores {
    pub fn new(scores: &ScoreTensor) -> Result<Self> {
        let n = scores.n_cal();
        if n == 0 {
            return Err(Error::shape("no calibration scores"));
        }
        let cells = scores.scores.cells();
        let data = scores.scores.data();
        let sorted = (0..cells)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut col = gather_cell(data, cells, c);
                col.sort_unstable_by(f64::total_cmp);
                col
            })
            .collect();
        Ok(SortedScores {
            method: scores.method,
            dims: scores.scores.sample_dims(),
            n_cal: n,
            sorted,
        })
    }

    pub fn n_cal(&self) -> usize {
        self.n_cal
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Same result as [`conformal_quantile`] on the original scores.
    pub fn quantile(&self, alpha: f64) -> Result<QuantileField> {
        check_alpha(alpha)?;
        let k = conformal_rank(self.n_cal, alpha);
        let q = if k > self.n_cal {
            vec![f64::INFINITY; self.dims.len()]
        } else {
            self.sorted.chunks_exact(self.n_cal).map(|col| col[k - 1]).collect()
        };
        Ok(QuantileField {
            q: FieldTensor::quantile(self.dims, q)?,
            alpha,
            n_cal: self.n_cal,
            method: self.method,
        })
    }
}
