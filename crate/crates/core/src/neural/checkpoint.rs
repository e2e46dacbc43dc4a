//! Model checkpoints: `model.json` plus one `CPT1` tensor per weight and bias.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::mlp::{Layer, MlpConfig, ModelParams, Normalizer};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor, Dims, FieldTensor, Finiteness};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: MlpConfig,
    pub train: Option<TrainConfig>,
    pub loss: Option<LossKind>,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub config_hash: String,
    /// Final training loss per epoch.
    #[serde(default)]
    pub history: Vec<f64>,
}

pub fn save_model(dir: &Path, model: &ModelParams, header: &CheckpointHeader) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, l) in model.layers.iter().enumerate() {
        let w = FieldTensor::new(Dims::new(1, l.outputs, l.inputs, 1), l.weight.clone())?;
        let b = FieldTensor::new(Dims::line(l.outputs), l.bias.clone())?;
        save_tensor(&dir.join(format!("layer_{i}_weight.cpt")), &w)?;
        save_tensor(&dir.join(format!("layer_{i}_bias.cpt")), &b)?;
    }
    let p = dir.join("model.json");
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

pub fn load_header(dir: &Path) -> Result<CheckpointHeader> {
    let p = dir.join("model.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

pub fn load_model(dir: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let header = load_header(dir)?;
    header.config.validate()?;
    let layers = header
        .config
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (inputs, outputs))| {
            let w = load_tensor(&dir.join(format!("layer_{i}_weight.cpt")), Finiteness::Finite)?;
            let b = load_tensor(&dir.join(format!("layer_{i}_bias.cpt")), Finiteness::Finite)?;
            if w.dims() != Dims::new(1, outputs, inputs, 1) || b.dims() != Dims::line(outputs) {
                return Err(Error::Format(format!("layer {i} tensors do not match the config")));
            }
            Ok(Layer {
                inputs,
                outputs,
                weight: w.into_data(),
                bias: b.into_data(),
            })
        })
        .collect::<Result<_>>()?;
    let model = ModelParams {
        config: header.config.clone(),
        layers,
        normalizer: header.normalizer,
        seed: header.seed,
    };
    Ok((model, header))
}
