//! From-scratch MLP surrogates: losses, reverse-mode gradients, Adam with
//! step decay, inverted dropout and Monte-Carlo dropout inference.
//!
//! Networks compute in normalised units (`[-1, 1]` range scaling fitted on
//! the training set). [`predict`] and [`predict_mc`] work in physical units.

mod checkpoint;
mod loss;
mod mlp;
mod train;

pub use checkpoint::{load_header, load_model, save_model, CheckpointHeader};
pub use loss::{loss_eval, loss_grad, min_log_var, LossKind, SIGMA_MIN};
pub use mlp::{
    backward_gradients, forward_mc_dropout, split_mean_logvar, Activation, Gradients, Layer, MlpConfig, Mode,
    ModelParams, Normalizer, OutputHead,
};
pub use train::{train, Adam, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::sampling::Rng;

/// Deterministic (eval-mode) prediction in physical units.
pub fn predict(m: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let out = m.forward(&m.normalizer.encode_input(x), Mode::Eval, &mut Rng::new(0))?;
    Ok(m.normalizer.decode_output(&out))
}

/// MC-dropout mean and standard deviation in physical units.
pub fn predict_mc(m: &ModelParams, x: &[f64], passes: usize, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mean, std) = forward_mc_dropout(m, &m.normalizer.encode_input(x), passes, rng)?;
    let scale = m.normalizer.output_scale();
    Ok((
        m.normalizer.decode_output(&mean),
        std.iter().map(|s| (s * scale).max(SIGMA_MIN)).collect(),
    ))
}

/// Mean and floored sigma from a mean-logvar head, in physical units.
pub fn predict_gaussian(m: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = m.forward(&m.normalizer.encode_input(x), Mode::Eval, &mut Rng::new(0))?;
    let (mu, sigma) = split_mean_logvar(&out);
    let scale = m.normalizer.output_scale();
    Ok((
        m.normalizer.decode_output(&mu),
        sigma.iter().map(|s| (s * scale).max(SIGMA_MIN)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normaliser_round_trip() {
        let n = Normalizer {
            in_min: -3.0,
            in_max: 7.5,
            out_min: 0.125,
            out_max: 9.0,
        };
        let y = [0.125, 3.3, 9.0, -1.0];
        let back = n.decode_output(&n.encode_output(&y));
        for (a, b) in y.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let x = n.encode_input(&[-3.0, 7.5]);
        assert_eq!(x, vec![-1.0, 1.0]);
    }
}
