use serde::{Deserialize, Serialize};

use super::band::{build_band, BandInputs};
use super::coverage::empirical_coverage;
use super::quantile::SortedScores;
use super::score::Method;
use crate::error::{Error, Result};
use crate::tensor::FieldStack;

/// One grid point of a validation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub target: f64,
    pub empirical: f64,
    pub tightness: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl SweepRow {
    /// Half-width of the reference interval.
    pub fn delta(&self) -> f64 {
        0.5 * (self.beta_hi - self.beta_lo)
    }

    /// How far coverage falls below `target - delta` (positive means a violation).
    pub fn shortfall(&self) -> f64 {
        (self.target - self.delta()) - self.empirical
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub method: Method,
    pub n_cal: usize,
    pub n_val: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Rows whose coverage lies below `target - delta`.
    pub fn violations(&self) -> Vec<SweepRow> {
        self.rows.iter().filter(|r| r.shortfall() > 0.0).copied().collect()
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("sweep csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("sweep csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("sweep csv: {e}")))
}

/// `lo, lo + step, ...` up to `hi` inclusive, rounded to 12 decimals.
pub fn alpha_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo > 0.0) || !(hi < 1.0) || lo > hi {
        return Err(Error::config(format!(
            "alpha grid {lo}:{hi}:{step} must satisfy 0 < lo <= hi < 1, step > 0"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Coverage and tightness of the conformal band at every `alpha`.
/// Calibration scores are computed and sorted once. Tightness is divided by
/// `width_scale`.
pub fn validation_sweep(
    cal: &BandInputs,
    cal_truth: &FieldStack,
    val: &BandInputs,
    val_truth: &FieldStack,
    alphas: &[f64],
    width_scale: f64,
) -> Result<SweepTable> {
    if cal.method() != val.method() {
        return Err(Error::config(format!(
            "calibration outputs are {} but validation outputs are {}",
            cal.method(),
            val.method()
        )));
    }
    if !(width_scale > 0.0 && width_scale.is_finite()) {
        return Err(Error::config(format!("width scale must be positive, got {width_scale}")));
    }
    let sorted = SortedScores::new(&cal.scores(cal_truth)?)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let q = sorted.quantile(alpha)?;
        let band = build_band(val, &q)?;
        let report = empirical_coverage(&band, val_truth)?;
        let law = report.law.expect("calibrated band has a coverage law");
        rows.push(SweepRow {
            alpha,
            target: 1.0 - alpha,
            empirical: report.mean_coverage,
            tightness: report.tightness / width_scale,
            beta_lo: law.lo,
            beta_hi: law.hi,
        });
    }
    Ok(SweepTable {
        method: cal.method(),
        n_cal: sorted.n_cal(),
        n_val: val_truth.n_samples(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::quantile::conformal_quantile;
    use crate::sampling::Rng;
    use crate::tensor::Dims;

    fn noisy(dims: Dims, n: usize, seed: u64) -> (BandInputs, FieldStack) {
        let mut rng = Rng::new(seed);
        let pred: Vec<f64> = (0..n * dims.len()).map(|_| rng.uniform()).collect();
        let truth = pred.iter().map(|p| p + rng.uniform_in(-0.3, 0.3)).collect();
        (
            BandInputs::Aer {
                pred: FieldStack::new(dims, pred).unwrap(),
            },
            FieldStack::new(dims, truth).unwrap(),
        )
    }

    #[test]
    fn grid() {
        let g = alpha_grid(0.05, 0.95, 0.05).unwrap();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[18], 0.95);
        assert_eq!(g[1], 0.1);
        assert_eq!(alpha_grid(0.1, 0.1, 0.05).unwrap(), vec![0.1]);
        assert!(alpha_grid(0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn single_point_is_one_coverage_call() {
        let dims = Dims::line(3);
        let (cal, cal_y) = noisy(dims, 200, 1);
        let (val, val_y) = noisy(dims, 150, 2);
        let t = validation_sweep(&cal, &cal_y, &val, &val_y, &[0.1], 1.0).unwrap();
        let q = conformal_quantile(&cal.scores(&cal_y).unwrap(), 0.1).unwrap();
        let r = empirical_coverage(&build_band(&val, &q).unwrap(), &val_y).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].empirical, r.mean_coverage);
        assert_eq!(t.rows[0].tightness, r.tightness);
        assert_eq!((t.rows[0].beta_lo, t.rows[0].beta_hi), r.beta_interval().unwrap());
        assert_eq!((t.n_cal, t.n_val), (200, 150));
    }

    #[test]
    fn csv_round_trip() {
        let dims = Dims::line(2);
        let (cal, cal_y) = noisy(dims, 100, 3);
        let (val, val_y) = noisy(dims, 100, 4);
        let alphas = alpha_grid(0.05, 0.95, 0.05).unwrap();
        let t = validation_sweep(&cal, &cal_y, &val, &val_y, &alphas, 2.0).unwrap();
        let text = rows_to_csv(&t.rows).unwrap();
        assert!(text.starts_with("alpha,target,empirical,tightness,beta_lo,beta_hi\n"));
        assert_eq!(rows_from_csv(&text).unwrap(), t.rows);
    }

    #[test]
    fn shortfall_sign() {
        let r = SweepRow {
            alpha: 0.1,
            target: 0.9,
            empirical: 0.88,
            tightness: 1.0,
            beta_lo: 0.87,
            beta_hi: 0.93,
        };
        assert!((r.delta() - 0.03).abs() < 1e-12);
        assert!(r.shortfall() < 0.0);
        let low = SweepRow { empirical: 0.86, ..r };
        assert!(low.shortfall() > 0.0);
    }
}
