use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor on predicted standard deviations.
pub const SIGMA_MIN: f64 = 1e-6;

/// `ln(SIGMA_MIN^2)`: log-variances below this are clamped.
pub fn min_log_var() -> f64 {
    2.0 * SIGMA_MIN.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Mse,
    L1,
    /// Quantile loss `max(tau e, (tau - 1) e)` with `e = target - pred`.
    Pinball { tau: f64 },
    /// Diagonal Gaussian NLL; predictions are interleaved `(mu, log sigma^2)` pairs.
    GaussianNll,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::Pinball { tau } = *self {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::config(format!("pinball tau must be in (0, 1), got {tau}")));
            }
        }
        Ok(())
    }

    /// Prediction length needed for `n_targets` target values.
    pub fn pred_len(&self, n_targets: usize) -> usize {
        match self {
            LossKind::GaussianNll => 2 * n_targets,
            _ => n_targets,
        }
    }

    fn check(&self, pred: &[f64], target: &[f64]) -> Result<()> {
        self.validate()?;
        if target.is_empty() || pred.len() != self.pred_len(target.len()) {
            return Err(Error::shape(format!(
                "{self:?}: prediction length {} does not match {} targets",
                pred.len(),
                target.len()
            )));
        }
        Ok(())
    }
}

/// Mean loss over target elements.
pub fn loss_eval(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<f64> {
    kind.check(pred, target)?;
    let m = target.len() as f64;
    let total: f64 = match kind {
        LossKind::Mse => pred.iter().zip(target).map(|(p, y)| (y - p).powi(2)).sum(),
        LossKind::L1 => pred.iter().zip(target).map(|(p, y)| (y - p).abs()).sum(),
        LossKind::Pinball { tau } => pred
            .iter()
            .zip(target)
            .map(|(p, y)| {
                let e = y - p;
                (tau * e).max((tau - 1.0) * e)
            })
            .sum(),
        LossKind::GaussianNll => pred
            .chunks_exact(2)
            .zip(target)
            .map(|(pair, y)| {
                let lv = pair[1].max(min_log_var());
                0.5 * lv + (y - pair[0]).powi(2) / (2.0 * lv.exp())
            })
            .sum(),
    };
    Ok(total / m)
}

/// Gradient of [`loss_eval`] with respect to `pred`. Kinks of L1 and
/// pinball take sub-gradient 0.
pub fn loss_grad(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    kind.check(pred, target)?;
    let mut g = vec![0.0; pred.len()];
    loss_grad_into(kind, pred, target, &mut g);
    Ok(g)
}

pub(crate) fn loss_grad_into(kind: LossKind, pred: &[f64], target: &[f64], g: &mut [f64]) {
    let inv_m = 1.0 / target.len() as f64;
    match kind {
        LossKind::Mse => {
            for ((g, p), y) in g.iter_mut().zip(pred).zip(target) {
                *g = -2.0 * (y - p) * inv_m;
            }
        }
        LossKind::L1 => {
            for ((g, p), y) in g.iter_mut().zip(pred).zip(target) {
                *g = -sign(y - p) * inv_m;
            }
        }
        LossKind::Pinball { tau } => {
            for ((g, p), y) in g.iter_mut().zip(pred).zip(target) {
                let e = y - p;
                let d = if e > 0.0 {
                    tau
                } else if e < 0.0 {
                    tau - 1.0
                } else {
                    0.0
                };
                *g = -d * inv_m;
            }
        }
        LossKind::GaussianNll => {
            for ((gp, pair), y) in g.chunks_exact_mut(2).zip(pred.chunks_exact(2)).zip(target) {
                let clamped = pair[1] < min_log_var();
                let lv = pair[1].max(min_log_var());
                let inv_var = (-lv).exp();
                let e = y - pair[0];
                gp[0] = -e * inv_var * inv_m;
                gp[1] = if clamped {
                    0.0
                } else {
                    (0.5 - 0.5 * e * e * inv_var) * inv_m
                };
            }
        }
    }
}

fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_half_is_half_l1() {
        let pred = [0.3, -1.0, 2.5, 7.0];
        let target = [1.0, -1.0, 0.0, 7.5];
        let p = loss_eval(LossKind::Pinball { tau: 0.5 }, &pred, &target).unwrap();
        let l1 = loss_eval(LossKind::L1, &pred, &target).unwrap();
        assert!((p - 0.5 * l1).abs() < 1e-15);
    }

    #[test]
    fn mse_at_target_is_flat() {
        let v = [1.0, 2.0, -3.0];
        assert_eq!(loss_eval(LossKind::Mse, &v, &v).unwrap(), 0.0);
        assert!(loss_grad(LossKind::Mse, &v, &v).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pinball_asymmetry() {
        let k = LossKind::Pinball { tau: 0.9 };
        // e = target - pred
        assert!((loss_eval(k, &[0.0], &[1.0]).unwrap() - 0.9).abs() < 1e-15);
        assert!((loss_eval(k, &[0.0], &[-1.0]).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kink_subgradient_is_zero() {
        for k in [LossKind::L1, LossKind::Pinball { tau: 0.3 }] {
            assert_eq!(loss_grad(k, &[2.0], &[2.0]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn gaussian_nll_value() {
        // mu = 1, log var = ln 4, y = 3: 0.5 ln 4 + 4 / 8
        let v = loss_eval(LossKind::GaussianNll, &[1.0, 4f64.ln()], &[3.0]).unwrap();
        assert!((v - (0.5 * 4f64.ln() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let kinds = [
            LossKind::Mse,
            LossKind::L1,
            LossKind::Pinball { tau: 0.05 },
            LossKind::GaussianNll,
        ];
        let target = [0.4, -1.2, 2.0];
        for k in kinds {
            let pred: Vec<f64> = (0..k.pred_len(3)).map(|i| 0.37 * i as f64 - 0.8).collect();
            let g = loss_grad(k, &pred, &target).unwrap();
            for i in 0..pred.len() {
                let h = 1e-6;
                let mut p = pred.clone();
                p[i] += h;
                let up = loss_eval(k, &p, &target).unwrap();
                p[i] -= 2.0 * h;
                let down = loss_eval(k, &p, &target).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{k:?}[{i}]: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn shape_and_tau_errors() {
        assert!(matches!(loss_eval(LossKind::Mse, &[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(loss_eval(LossKind::GaussianNll, &[1.0], &[1.0]).is_err());
        assert!(loss_eval(LossKind::Pinball { tau: 1.0 }, &[1.0], &[1.0]).is_err());
    }
}
