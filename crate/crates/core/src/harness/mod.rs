//! Experiment configs, the staged pipeline, reports and figures.

mod config;
mod pipeline;
mod plot;
mod store;

pub use config::{
    parse_config, parse_config_str, Experiment, ExperimentConfig, Regime, SurrogateConfig, TrainSettings,
};
pub use pipeline::{
    check_reports, load_sweep_reports, run_experiment, MethodData, MethodReport, Pipeline, RunArtifacts, Stage, StageRecord,
};
pub use plot::{Figure, Stroke, PALETTE};
pub use store::{hash_files, Store, StageMarker, MARKER};
