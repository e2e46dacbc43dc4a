use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::mlp::{Gradients, MlpConfig, Mode, ModelParams, Normalizer};
use crate::error::{Error, Result};
use crate::sampling::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 50,
            learning_rate: 0.005,
            decay_every: 100,
            decay_factor: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::config("epochs, batch_size and decay_every must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("learning_rate must be > 0 and decay_factor in (0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(model: &ModelParams) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let params = p.weight.iter_mut().chain(p.bias.iter_mut());
            let gs = g.weight.iter().chain(&g.bias);
            let ms = m.weight.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weight.iter_mut().chain(v.bias.iter_mut());
            for (((p, g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Mean training loss per epoch (normalised units).
    pub history: Vec<f64>,
}

/// Train on `(input, target)` pairs in physical units. Inputs and targets
/// are range-scaled to `[-1, 1]` with training-set extremes, which the
/// returned model keeps for inverse transforms.
pub fn train(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    mcfg: &MlpConfig,
    tcfg: &TrainConfig,
    kind: LossKind,
) -> Result<TrainOutcome> {
    mcfg.validate()?;
    tcfg.validate()?;
    kind.validate()?;
    if inputs.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.iter().any(|x| x.len() != mcfg.input_len())
        || targets.iter().any(|y| y.len() != mcfg.target_len())
    {
        return Err(Error::shape(format!(
            "samples must be {} -> {} values",
            mcfg.input_len(),
            mcfg.target_len()
        )));
    }
    let head_ok = matches!(
        (kind, mcfg.output_head),
        (LossKind::GaussianNll, super::OutputHead::MeanLogVar)
            | (LossKind::Mse | LossKind::L1 | LossKind::Pinball { .. }, super::OutputHead::Point)
    );
    if !head_ok {
        return Err(Error::config(format!(
            "loss {kind:?} does not fit output head {:?}",
            mcfg.output_head
        )));
    }

    let normalizer = Normalizer::fit(
        inputs.iter().map(Vec::as_slice),
        targets.iter().map(Vec::as_slice),
    );
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| normalizer.encode_input(x)).collect();
    let ys: Vec<Vec<f64>> = targets.iter().map(|y| normalizer.encode_output(y)).collect();

    let mut model = ModelParams::init(mcfg.clone(), tcfg.seed)?;
    model.normalizer = normalizer;
    let mut adam = Adam::new(&model);
    let mut rng = Rng::child(tcfg.seed, 1);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let lr = tcfg.learning_rate_at(epoch);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            for &i in batch {
                epoch_loss += model.accumulate(&xs[i], &ys[i], kind, Mode::Train, &mut rng, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model, &grads, lr);
        }
        let mean = epoch_loss / xs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                at: format!("epoch {epoch}"),
                detail: format!("training loss is {mean}"),
            });
        }
        history.push(mean);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{predict, OutputHead};

    #[test]
    fn step_decay_schedule() {
        let t = TrainConfig::default();
        assert_eq!(t.learning_rate_at(0), 0.005);
        assert_eq!(t.learning_rate_at(99), 0.005);
        assert_eq!(t.learning_rate_at(100), 0.0025);
        assert_eq!(t.learning_rate_at(250), 0.00125);
    }

    #[test]
    fn fits_linear_map() {
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 50.0 - 1.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x[0]]).collect();
        let tcfg = TrainConfig {
            epochs: 500,
            batch_size: 100,
            learning_rate: 0.05,
            seed: 1,
            ..Default::default()
        };
        let out = train(&xs, &ys, &MlpConfig::new(vec![1, 1]), &tcfg, LossKind::Mse).unwrap();
        let mse: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (predict(&out.model, x).unwrap()[0] - y[0]).powi(2))
            .sum::<f64>()
            / 100.0;
        assert!(mse <= 1e-6, "mse {mse:e}");
        assert_eq!(out.history.len(), 500);
    }

    #[test]
    fn deterministic_given_seed() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[1]]).collect();
        let mcfg = MlpConfig {
            dropout_rate: 0.2,
            ..MlpConfig::new(vec![2, 8, 1])
        };
        let tcfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let a = train(&xs, &ys, &mcfg, &tcfg, LossKind::Mse).unwrap();
        let b = train(&xs, &ys, &mcfg, &tcfg, LossKind::Mse).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mcfg = MlpConfig::new(vec![1, 1]);
        let t = TrainConfig::default();
        assert!(matches!(train(&[], &[], &mcfg, &t, LossKind::Mse), Err(Error::Config(_))));
        assert!(matches!(
            train(&[vec![1.0, 2.0]], &[vec![1.0]], &mcfg, &t, LossKind::Mse),
            Err(Error::Shape(_))
        ));
        let nll = MlpConfig {
            output_head: OutputHead::MeanLogVar,
            ..mcfg.clone()
        };
        assert!(train(&[vec![1.0]], &[vec![1.0]], &nll, &t, LossKind::Mse).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = vec![vec![0.0], vec![1.0]];
        let tcfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e300,
            ..Default::default()
        };
        let err = train(&xs, &ys, &MlpConfig::new(vec![1, 4, 1]), &tcfg, LossKind::Mse).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
