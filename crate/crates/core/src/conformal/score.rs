use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::SIGMA_MIN;
use crate::tensor::FieldStack;

/// Score family, without its training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Aer,
    Std,
    Cqr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Aer, Method::Std, Method::Cqr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aer => "aer",
            Method::Std => "std",
            Method::Cqr => "cqr",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aer" => Ok(Method::Aer),
            "std" => Ok(Method::Std),
            "cqr" => Ok(Method::Cqr),
            other => Err(Error::config(format!("unknown method `{other}` (aer|std|cqr)"))),
        }
    }
}

/// Score family with the parameters of the models behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonconformityMethod {
    Aer,
    /// MC-dropout mean and standard deviation over `passes` forward passes.
    Std { passes: usize },
    /// Lower and upper quantile models at levels `alpha_lo < alpha_hi`.
    Cqr { alpha_lo: f64, alpha_hi: f64 },
}

impl NonconformityMethod {
    pub fn tag(&self) -> Method {
        match self {
            NonconformityMethod::Aer => Method::Aer,
            NonconformityMethod::Std { .. } => Method::Std,
            NonconformityMethod::Cqr { .. } => Method::Cqr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NonconformityMethod::Aer => Ok(()),
            NonconformityMethod::Std { passes } if passes < 2 => {
                Err(Error::config(format!("STD needs at least 2 dropout passes, got {passes}")))
            }
            NonconformityMethod::Std { .. } => Ok(()),
            NonconformityMethod::Cqr { alpha_lo, alpha_hi } => {
                if 0.0 < alpha_lo && alpha_lo < alpha_hi && alpha_hi < 1.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "CQR levels must satisfy 0 < lo < hi < 1, got {alpha_lo}, {alpha_hi}"
                    )))
                }
            }
        }
    }
}

/// Calibration scores, one stack sample per calibration point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub method: Method,
    pub scores: FieldStack,
}

impl ScoreTensor {
    pub fn n_cal(&self) -> usize {
        self.scores.n_samples()
    }
}

fn check_same(what: &str, a: &FieldStack, b: &FieldStack) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "{what}: {} samples of {} vs {} samples of {}",
            a.n_samples(),
            a.sample_dims(),
            b.n_samples(),
            b.sample_dims()
        )));
    }
    Ok(())
}

fn zip_scores(
    method: Method,
    parts: [&FieldStack; 2],
    truth: &FieldStack,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<ScoreTensor> {
    check_same("scores", parts[0], truth)?;
    check_same("scores", parts[1], truth)?;
    let data = parts[0]
        .data()
        .iter()
        .zip(parts[1].data())
        .zip(truth.data())
        .map(|((&a, &b), &y)| f(a, b, y))
        .collect();
    Ok(ScoreTensor {
        method,
        scores: FieldStack::new(truth.sample_dims(), data)?,
    })
}

/// Absolute error `|y - f(x)|`.
pub fn score_aer(pred: &FieldStack, truth: &FieldStack) -> Result<ScoreTensor> {
    zip_scores(Method::Aer, [pred, pred], truth, |p, _, y| (y - p).abs())
}

/// Normalised error `|y - mu(x)| / sigma(x)`.
pub fn score_std(mu: &FieldStack, sigma: &FieldStack, truth: &FieldStack) -> Result<ScoreTensor> {
    if let Some(i) = sigma.data().iter().position(|&s| !(s >= SIGMA_MIN)) {
        return Err(Error::data(format!(
            "sigma element {i} is {} (floor {SIGMA_MIN:e})",
            sigma.data()[i]
        )));
    }
    zip_scores(Method::Std, [mu, sigma], truth, |m, s, y| (y - m).abs() / s)
}

/// Signed distance to the nearest edge of `[lo, hi]`: `max(lo - y, y - hi)`.
pub fn score_cqr(lo: &FieldStack, hi: &FieldStack, truth: &FieldStack) -> Result<ScoreTensor> {
    zip_scores(Method::Cqr, [lo, hi], truth, |l, h, y| (l - y).max(y - h))
}
