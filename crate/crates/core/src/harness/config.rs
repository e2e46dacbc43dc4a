use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conformal::{alpha_grid, NonconformityMethod};
use crate::digest::hash_json;
use crate::error::{Error, Result};
use crate::neural::{Activation, LossKind, TrainConfig};
use crate::sampling::ParameterSpec;
use crate::solvers::{SolverSetup, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Poisson,
    Convdiff,
    Wave,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Poisson => "poisson",
            Experiment::Convdiff => "convdiff",
            Experiment::Wave => "wave",
        }
    }
}

/// A solver setup and the distribution its parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub solver: SolverSetup,
    pub specs: Vec<ParameterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Loss of the single AER model.
    pub aer_loss: LossKind,
    /// Dropout of the STD model (the other models use none).
    pub dropout_rate: f64,
}

/// Optimiser settings shared by every surrogate; model seeds derive from
/// the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_val: usize,
    pub window: Window,
    pub train_regime: Regime,
    /// Calibration and validation share this regime.
    pub calibration_regime: Regime,
    pub methods: Vec<NonconformityMethod>,
    pub surrogate: SurrogateConfig,
    pub train: TrainSettings,
    pub alphas: Vec<f64>,
    pub primary_alpha: f64,
    pub ncal_sizes: Vec<usize>,
    /// Overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn all_methods() -> Vec<NonconformityMethod> {
    vec![
        NonconformityMethod::Aer,
        NonconformityMethod::Std { passes: 32 },
        NonconformityMethod::Cqr {
            alpha_lo: 0.05,
            alpha_hi: 0.95,
        },
    ]
}

impl ExperimentConfig {
    /// Desk-scale defaults for one experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let c = ParameterSpec::continuous;
        let (train_regime, calibration_regime, sizes, window) = match experiment {
            Experiment::Poisson => {
                let r = Regime {
                    solver: SolverSetup::poisson(),
                    specs: vec![c("u_init", 0.0, 4.0)],
                };
                (r.clone(), r, (2000, 1000, 1000), Window { t_in: 1, t_out: 1 })
            }
            Experiment::Convdiff => (
                Regime {
                    solver: SolverSetup::convdiff(),
                    specs: vec![
                        c("k", 1.0, 2.0),
                        c("c", 0.1, 0.5),
                        c("mu", 1.0, 8.0),
                        c("sigma2", 0.25, 0.75),
                    ],
                },
                Regime {
                    solver: SolverSetup::convdiff(),
                    specs: vec![
                        c("k", 2.0, 4.0),
                        c("c", 0.5, 1.0),
                        c("mu", 1.0, 8.0),
                        c("sigma2", 0.25, 0.75),
                    ],
                },
                (500, 1000, 1000),
                Window { t_in: 10, t_out: 10 },
            ),
            Experiment::Wave => {
                let specs = vec![
                    c("amplitude", 10.0, 50.0),
                    c("x_pos", 0.1, 0.5),
                    c("y_pos", 0.1, 0.5),
                ];
                (
                    Regime {
                        solver: SolverSetup::wave(1.0),
                        specs: specs.clone(),
                    },
                    Regime {
                        solver: SolverSetup::wave(0.5),
                        specs,
                    },
                    (200, 500, 500),
                    Window { t_in: 10, t_out: 10 },
                )
            }
        };
        let methods = match experiment {
            Experiment::Wave => vec![NonconformityMethod::Aer, NonconformityMethod::Std { passes: 32 }],
            _ => all_methods(),
        };
        let aer_loss = match experiment {
            Experiment::Poisson => LossKind::L1,
            _ => LossKind::Mse,
        };
        let (epochs, decay_every) = match experiment {
            Experiment::Poisson => (300, 100),
            _ => (100, 25),
        };
        ExperimentConfig {
            experiment,
            seed: 0,
            n_train: sizes.0,
            n_cal: sizes.1,
            n_val: sizes.2,
            window,
            train_regime,
            calibration_regime,
            methods,
            surrogate: SurrogateConfig {
                hidden: vec![64, 64, 64],
                activation: Activation::Tanh,
                aer_loss,
                dropout_rate: 0.1,
            },
            train: TrainSettings {
                epochs,
                batch_size: 50,
                learning_rate: 0.005,
                decay_every,
                decay_factor: 0.5,
            },
            alphas: alpha_grid(0.05, 0.95, 0.05).expect("default grid is valid"),
            primary_alpha: 0.1,
            ncal_sizes: [250, 500, 750, 1000].into_iter().filter(|&n| n <= sizes.1).collect(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_cal == 0 || self.n_val == 0 {
            return Err(Error::config("n_train, n_cal and n_val must be positive"));
        }
        for (field, regime) in [
            ("train_regime", &self.train_regime),
            ("calibration_regime", &self.calibration_regime),
        ] {
            if regime.solver.name() != self.experiment.name() {
                return Err(Error::config(format!(
                    "{field}.solver is {} in a {} experiment",
                    regime.solver.name(),
                    self.experiment.name()
                )));
            }
            let mut seen = HashSet::new();
            for s in &regime.specs {
                if !seen.insert(s.name.as_str()) {
                    return Err(Error::config(format!(
                        "{field}.specs: duplicate parameter `{}`",
                        s.name
                    )));
                }
                s.validate()
                    .map_err(|e| Error::config(format!("{field}.specs: {}", e.root())))?;
            }
            regime
                .solver
                .check_specs(&regime.specs)
                .map_err(|e| Error::config(format!("{field}: {}", e.root())))?;
            let frames = regime.solver.n_frames();
            if self.window.t_in == 0 || self.window.t_out == 0 || self.window.t_in + self.window.t_out > frames {
                return Err(Error::config(format!(
                    "window t_in={} t_out={} does not fit {frames} frames of {field}",
                    self.window.t_in, self.window.t_out
                )));
            }
        }
        let (a, b) = (&self.train_regime.solver, &self.calibration_regime.solver);
        if a.param_names() != b.param_names() || a.n_frames() != b.n_frames() {
            return Err(Error::config("train and calibration regimes must produce matching fields"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods: at least one method is required"));
        }
        let mut tags = HashSet::new();
        for m in &self.methods {
            m.validate()?;
            if !tags.insert(m.tag()) {
                return Err(Error::config(format!("methods: {} listed twice", m.tag())));
            }
        }
        if self.alphas.is_empty() {
            return Err(Error::config("alphas: grid is empty"));
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config(format!("alphas[{i}] = {a} is outside (0, 1)")));
            }
        }
        if !(self.primary_alpha > 0.0 && self.primary_alpha < 1.0) {
            return Err(Error::config(format!(
                "primary_alpha = {} is outside (0, 1)",
                self.primary_alpha
            )));
        }
        if self.ncal_sizes.contains(&0) {
            return Err(Error::config("ncal_sizes: sizes must be positive"));
        }
        let s = &self.surrogate;
        if !(0.0..1.0).contains(&s.dropout_rate) {
            return Err(Error::config(format!(
                "surrogate.dropout_rate = {} is outside [0, 1)",
                s.dropout_rate
            )));
        }
        if s.hidden.contains(&0) {
            return Err(Error::config("surrogate.hidden: widths must be positive"));
        }
        let uses_std = self.methods.iter().any(|m| matches!(m, NonconformityMethod::Std { .. }));
        if uses_std && s.dropout_rate == 0.0 {
            return Err(Error::config("surrogate.dropout_rate must be > 0 for the STD method"));
        }
        if matches!(s.aer_loss, LossKind::GaussianNll) {
            return Err(Error::config("surrogate.aer_loss must be a point loss"));
        }
        s.aer_loss.validate()?;
        self.train.with_seed(0).validate()
    }

    /// Hash of everything that determines results (the output directory
    /// excluded).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        hash_json(&c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Overlay `user` onto `base`: objects merge key by key, anything else
/// replaces.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse a config document: the experiment's defaults overlaid with the
/// document's keys, then validated. Unknown keys are rejected.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let user: Value = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("invalid JSON at line {} column {}: {e}", e.line(), e.column())))?;
    let experiment = user
        .get("experiment")
        .ok_or_else(|| Error::config("missing field `experiment` (poisson | convdiff | wave)"))?;
    let experiment: Experiment = serde_json::from_value(experiment.clone())
        .map_err(|e| Error::config(format!("field `experiment`: {e}")))?;
    let mut merged = serde_json::to_value(ExperimentConfig::defaults(experiment)).expect("defaults serialize");
    merge(&mut merged, user);
    let cfg: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| Error::config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_poisson() {
        let cfg = parse_config_str(r#"{"experiment": "poisson"}"#).unwrap();
        assert_eq!(cfg.train_regime.solver, SolverSetup::Poisson { n_grid: 32 });
        assert_eq!(cfg.alphas.len(), 19);
        assert_eq!(cfg.alphas[0], 0.05);
        assert_eq!(cfg.alphas[18], 0.95);
        assert_eq!((cfg.n_train, cfg.n_cal, cfg.n_val), (2000, 1000, 1000));
        assert_eq!(cfg.methods.len(), 3);
    }

    #[test]
    fn every_default_validates() {
        for e in [Experiment::Poisson, Experiment::Convdiff, Experiment::Wave] {
            ExperimentConfig::defaults(e).validate().unwrap();
        }
    }

    #[test]
    fn nested_override_keeps_other_defaults() {
        let cfg = parse_config_str(
            r#"{"experiment": "wave", "calibration_regime": {"solver": {"speed": 0.25}}, "train": {"epochs": 7}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.calibration_regime.solver, SolverSetup::Wave { speed, n_grid: 17, .. } if speed == 0.25));
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, 50);
    }

    #[test]
    fn rejects_alpha_outside_unit_interval() {
        let err = parse_config_str(r#"{"experiment": "poisson", "alphas": [0.1, 1.2]}"#).unwrap_err();
        assert!(err.to_string().contains("alphas[1]"), "{err}");
    }

    #[test]
    fn rejects_duplicate_parameter() {
        let err = parse_config_str(
            r#"{"experiment": "poisson", "train_regime": {"specs": [
                {"name": "u_init", "lo": 0, "hi": 1}, {"name": "u_init", "lo": 0, "hi": 2}]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate parameter"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_json() {
        let err = parse_config_str(r#"{"experiment": "poisson", "n_trian": 5}"#).unwrap_err();
        assert!(err.to_string().contains("n_trian"), "{err}");
        let err = parse_config_str("{\n\"experiment\": \"poisson\",\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_config_str(r#"{"n_train": 5}"#).is_err());
    }

    #[test]
    fn solver_must_match_experiment() {
        let err = parse_config_str(
            r#"{"experiment": "poisson", "calibration_regime": {"solver": {"kind": "wave", "speed": 1.0, "n_grid": 17, "n_steps": 150, "dt": 0.00667}}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::defaults(Experiment::Poisson);
        let h = a.config_hash();
        a.output_dir = Some("/tmp/x".into());
        assert_eq!(a.config_hash(), h);
        a.seed = 1;
        assert_ne!(a.config_hash(), h);
    }
}
