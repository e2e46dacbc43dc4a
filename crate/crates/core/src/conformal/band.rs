use rayon::prelude::*;

use super::quantile::{check_alpha, QuantileField};
use super::score::{score_aer, score_cqr, score_std, Method, ScoreTensor};
use super::stats::normal_quantile;
use crate::error::{Error, Result};
use crate::tensor::{Dims, FieldStack, Finiteness};

/// Model outputs a band is built around, one stack sample per input.
#[derive(Debug, Clone, PartialEq)]
pub enum BandInputs {
    Aer { pred: FieldStack },
    Std { mu: FieldStack, sigma: FieldStack },
    Cqr { lo: FieldStack, hi: FieldStack },
}

impl BandInputs {
    pub fn method(&self) -> Method {
        match self {
            BandInputs::Aer { .. } => Method::Aer,
            BandInputs::Std { .. } => Method::Std,
            BandInputs::Cqr { .. } => Method::Cqr,
        }
    }

    fn parts(&self) -> (&FieldStack, &FieldStack) {
        match self {
            BandInputs::Aer { pred } => (pred, pred),
            BandInputs::Std { mu, sigma } => (mu, sigma),
            BandInputs::Cqr { lo, hi } => (lo, hi),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.parts().0.n_samples()
    }

    pub fn sample_dims(&self) -> Dims {
        self.parts().0.sample_dims()
    }

    fn check(&self) -> Result<()> {
        let (a, b) = self.parts();
        if !a.same_shape(b) {
            return Err(Error::shape(format!(
                "{} band inputs disagree: {} vs {}",
                self.method(),
                a.sample_dims(),
                b.sample_dims()
            )));
        }
        Ok(())
    }

    /// Calibration scores of these outputs against `truth`.
    pub fn scores(&self, truth: &FieldStack) -> Result<ScoreTensor> {
        match self {
            BandInputs::Aer { pred } => score_aer(pred, truth),
            BandInputs::Std { mu, sigma } => score_std(mu, sigma, truth),
            BandInputs::Cqr { lo, hi } => score_cqr(lo, hi, truth),
        }
    }

    /// The samples at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Result<BandInputs> {
        Ok(match self {
            BandInputs::Aer { pred } => BandInputs::Aer {
                pred: pred.select(indices)?,
            },
            BandInputs::Std { mu, sigma } => BandInputs::Std {
                mu: mu.select(indices)?,
                sigma: sigma.select(indices)?,
            },
            BandInputs::Cqr { lo, hi } => BandInputs::Cqr {
                lo: lo.select(indices)?,
                hi: hi.select(indices)?,
            },
        })
    }
}

/// Per-cell prediction interval `[lower, upper]` for every prediction sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBand {
    pub lower: FieldStack,
    pub upper: FieldStack,
    pub method: Method,
    pub alpha: f64,
    /// Calibration size behind the band; `0` for an uncalibrated band.
    pub n_cal: usize,
}

impl PredictionBand {
    pub fn n_samples(&self) -> usize {
        self.lower.n_samples()
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.upper.data().iter().zip(self.lower.data()).map(|(u, l)| u - l)
    }

    /// Whether every interval of `self` lies inside the matching one of `other`.
    pub fn is_within(&self, other: &PredictionBand) -> bool {
        self.lower.same_shape(&other.lower)
            && self
                .lower
                .data()
                .iter()
                .zip(self.upper.data())
                .zip(other.lower.data().iter().zip(other.upper.data()))
                .all(|((l, u), (ol, ou))| ol <= l && u <= ou)
    }
}

/// Interval edges for one cell with offset `q` (a multiplier of `sigma`
/// for STD). A CQR interval that the offset turns inside out is empty as a
/// conformal set; it collapses onto the midpoint of `lo` and `hi`.
fn edges(method: Method, a: f64, b: f64, q: f64) -> (f64, f64) {
    match method {
        Method::Aer => (a - q, a + q),
        Method::Std => (a - q * b, a + q * b),
        Method::Cqr => {
            let (l, u) = (a - q, b + q);
            if l <= u {
                (l, u)
            } else {
                let mid = 0.5 * (a + b);
                (mid, mid)
            }
        }
    }
}

fn assemble(inputs: &BandInputs, q: &[f64], alpha: f64, n_cal: usize) -> Result<PredictionBand> {
    inputs.check()?;
    let method = inputs.method();
    let (a, b) = inputs.parts();
    let cells = a.cells();
    let (lower, upper): (Vec<f64>, Vec<f64>) = a
        .data()
        .par_chunks(cells)
        .zip(b.data().par_chunks(cells))
        .flat_map_iter(|(sa, sb)| {
            sa.iter()
                .zip(sb)
                .zip(q)
                .map(|((&a, &b), &q)| edges(method, a, b, q))
                .collect::<Vec<_>>()
        })
        .unzip();
    let dims = a.sample_dims();
    Ok(PredictionBand {
        lower: FieldStack::with_finiteness(dims, lower, Finiteness::Infinite)?,
        upper: FieldStack::with_finiteness(dims, upper, Finiteness::Infinite)?,
        method,
        alpha,
        n_cal,
    })
}

/// Conformal band: AER `f -+ q`, STD `mu -+ q sigma`, CQR `[lo - q, hi + q]`.
pub fn build_band(inputs: &BandInputs, q: &QuantileField) -> Result<PredictionBand> {
    if inputs.method() != q.method {
        return Err(Error::config(format!(
            "quantile field is for {} but band inputs are {}",
            q.method,
            inputs.method()
        )));
    }
    if inputs.sample_dims() != q.q.dims() {
        return Err(Error::shape(format!(
            "quantile field {} does not match outputs {}",
            q.q.dims(),
            inputs.sample_dims()
        )));
    }
    assemble(inputs, q.q.data(), q.alpha, q.n_cal)
}

/// The model's own band before calibration: `[lo, hi]` for CQR and
/// `mu -+ z sigma` with the Gaussian `z` for coverage `1 - alpha` for STD.
/// AER has no intrinsic band.
pub fn uncalibrated_band(inputs: &BandInputs, alpha: f64) -> Result<PredictionBand> {
    check_alpha(alpha)?;
    let offset = match inputs.method() {
        Method::Aer => return Err(Error::config("AER has no uncalibrated band")),
        Method::Std => normal_quantile(1.0 - 0.5 * alpha),
        Method::Cqr => 0.0,
    };
    assemble(inputs, &vec![offset; inputs.sample_dims().len()], alpha, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FieldTensor;

    fn scalar(values: &[f64]) -> FieldStack {
        FieldStack::new(Dims::line(1), values.to_vec()).unwrap()
    }

    fn qfield(method: Method, q: f64) -> QuantileField {
        QuantileField {
            q: FieldTensor::quantile(Dims::line(1), vec![q]).unwrap(),
            alpha: 0.1,
            n_cal: 10,
            method,
        }
    }

    fn edges_of(b: &PredictionBand) -> Vec<(f64, f64)> {
        b.lower.data().iter().copied().zip(b.upper.data().iter().copied()).collect()
    }

    #[test]
    fn aer_band() {
        let b = build_band(&BandInputs::Aer { pred: scalar(&[1.0, -4.0]) }, &qfield(Method::Aer, 0.2)).unwrap();
        let e = edges_of(&b);
        assert!((e[0].0 - 0.8).abs() < 1e-15 && (e[0].1 - 1.2).abs() < 1e-15);
        assert!(b.widths().all(|w| (w - 0.4).abs() < 1e-12));
    }

    #[test]
    fn std_band() {
        let inputs = BandInputs::Std {
            mu: scalar(&[0.0, 0.0]),
            sigma: scalar(&[2.0, 1.0]),
        };
        let b = build_band(&inputs, &qfield(Method::Std, 1.5)).unwrap();
        assert_eq!(edges_of(&b), vec![(-3.0, 3.0), (-1.5, 1.5)]);
    }

    #[test]
    fn cqr_negative_quantile_tightens() {
        let inputs = BandInputs::Cqr {
            lo: scalar(&[3.0]),
            hi: scalar(&[4.0]),
        };
        let b = build_band(&inputs, &qfield(Method::Cqr, -0.25)).unwrap();
        assert_eq!(edges_of(&b), vec![(3.25, 3.75)]);
    }

    #[test]
    fn cqr_inverted_interval_collapses() {
        let inputs = BandInputs::Cqr {
            lo: scalar(&[3.0, 4.0]),
            hi: scalar(&[4.0, 3.0]),
        };
        let b = build_band(&inputs, &qfield(Method::Cqr, -0.75)).unwrap();
        assert_eq!(edges_of(&b), vec![(3.5, 3.5), (3.5, 3.5)]);
        let b = build_band(&inputs, &qfield(Method::Cqr, 0.75)).unwrap();
        assert_eq!(edges_of(&b), vec![(2.25, 4.75), (3.25, 3.75)]);
    }

    #[test]
    fn infinite_quantile_gives_infinite_band() {
        let inputs = BandInputs::Std {
            mu: scalar(&[1.0]),
            sigma: scalar(&[0.5]),
        };
        let b = build_band(&inputs, &qfield(Method::Std, f64::INFINITY)).unwrap();
        assert_eq!(edges_of(&b), vec![(f64::NEG_INFINITY, f64::INFINITY)]);
    }

    #[test]
    fn tag_and_dim_mismatch() {
        let inputs = BandInputs::Aer { pred: scalar(&[1.0]) };
        assert!(matches!(build_band(&inputs, &qfield(Method::Cqr, 0.1)), Err(Error::Config(_))));
        let wide = BandInputs::Aer {
            pred: FieldStack::new(Dims::line(2), vec![0.0, 1.0]).unwrap(),
        };
        assert!(matches!(build_band(&wide, &qfield(Method::Aer, 0.1)), Err(Error::Shape(_))));
    }

    #[test]
    fn uncalibrated_bands() {
        let cqr = BandInputs::Cqr {
            lo: scalar(&[1.0]),
            hi: scalar(&[2.0]),
        };
        assert_eq!(edges_of(&uncalibrated_band(&cqr, 0.1).unwrap()), vec![(1.0, 2.0)]);
        let std = BandInputs::Std {
            mu: scalar(&[0.0]),
            sigma: scalar(&[1.0]),
        };
        let b = uncalibrated_band(&std, 0.1).unwrap();
        assert!((b.upper.data()[0] - 1.644_853_626_951_472).abs() < 1e-8);
        assert!(uncalibrated_band(&BandInputs::Aer { pred: scalar(&[0.0]) }, 0.1).is_err());
    }
}
