//! Turning design rows into exchangeable `(input window, output window)` records.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConvDiffConfig, Diffusion, PoissonConfig, WaveConfig, WaveInitial};
use crate::digest::hash_json;
use crate::error::{Error, Result};
use crate::sampling::{DesignMatrix, ParameterSpec};
use crate::tensor::{self, Dims, FieldStack, FieldTensor, Finiteness};

pub const SOLVER_VERSION: &str = concat!("stcp-solvers/", env!("CARGO_PKG_VERSION"));

/// Solver plus its fixed (non-sampled) settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSetup {
    /// Sampled: `u_init` (the constant source).
    Poisson { n_grid: usize },
    /// Sampled: `k`, `c`, `mu`, `sigma2`.
    ConvDiff {
        n_grid: usize,
        length: f64,
        n_steps: usize,
        dt: f64,
        stride: usize,
    },
    /// Sampled: `amplitude`, `x_pos`, `y_pos`.
    Wave {
        speed: f64,
        n_grid: usize,
        n_steps: usize,
        dt: f64,
    },
}

impl SolverSetup {
    pub fn poisson() -> Self {
        SolverSetup::Poisson { n_grid: 32 }
    }

    pub fn convdiff() -> Self {
        let d = ConvDiffConfig::default();
        SolverSetup::ConvDiff {
            n_grid: d.n_grid,
            length: d.length,
            n_steps: d.n_steps,
            dt: d.dt,
            stride: d.stride,
        }
    }

    /// Desk-scale wave setup on a 17 x 17 grid.
    pub fn wave(speed: f64) -> Self {
        SolverSetup::Wave {
            speed,
            n_grid: 17,
            n_steps: 150,
            dt: 0.00667,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverSetup::Poisson { .. } => "poisson",
            SolverSetup::ConvDiff { .. } => "convdiff",
            SolverSetup::Wave { .. } => "wave",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            SolverSetup::Poisson { .. } => &["u_init"],
            SolverSetup::ConvDiff { .. } => &["k", "c", "mu", "sigma2"],
            SolverSetup::Wave { .. } => &["amplitude", "x_pos", "y_pos"],
        }
    }

    /// Number of frames in one trajectory.
    pub fn n_frames(&self) -> usize {
        match *self {
            SolverSetup::Poisson { .. } => 2,
            SolverSetup::ConvDiff { n_steps, stride, .. } => n_steps / stride.max(1),
            SolverSetup::Wave { n_steps, .. } => n_steps,
        }
    }

    /// Check the design columns are exactly this solver's parameters, in order.
    pub fn check_specs(&self, specs: &[ParameterSpec]) -> Result<()> {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        if names != self.param_names() {
            return Err(Error::config(format!(
                "{} expects parameters {:?}, design has {:?}",
                self.name(),
                self.param_names(),
                names
            )));
        }
        Ok(())
    }

    /// Full trajectory for one design row (ordered as [`SolverSetup::param_names`]).
    pub fn trajectory(&self, row: &[f64]) -> Result<FieldTensor> {
        match *self {
            SolverSetup::Poisson { n_grid } => super::poisson_trajectory(&PoissonConfig {
                n_grid,
                source: row[0],
            }),
            SolverSetup::ConvDiff {
                n_grid,
                length,
                n_steps,
                dt,
                stride,
            } => super::solve_convdiff_1d(&ConvDiffConfig {
                diffusion: Diffusion::Sine { k: row[0] },
                velocity: row[1],
                mu: row[2],
                sigma2: row[3],
                n_grid,
                length,
                n_steps,
                dt,
                stride,
            }),
            SolverSetup::Wave {
                speed,
                n_grid,
                n_steps,
                dt,
            } => super::solve_wave_2d(&WaveConfig {
                initial: WaveInitial::Gaussian {
                    amplitude: row[0],
                    x_pos: row[1],
                    y_pos: row[2],
                },
                speed,
                n_grid,
                n_steps,
                dt,
            }),
        }
    }
}

/// Input/output window lengths, both starting from the initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub t_in: usize,
    pub t_out: usize,
}

impl Window {
    pub fn split(&self, traj: &FieldTensor) -> Result<(FieldTensor, FieldTensor)> {
        let frames = traj.dims().t();
        if self.t_in == 0 || self.t_out == 0 || self.t_in + self.t_out > frames {
            return Err(Error::config(format!(
                "window t_in={} t_out={} does not fit {frames} frames",
                self.t_in, self.t_out
            )));
        }
        Ok((
            traj.time_slice(0, self.t_in)?,
            traj.time_slice(self.t_in, self.t_out)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub params: Vec<f64>,
    pub input: FieldTensor,
    pub output: FieldTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub solver: SolverSetup,
    pub solver_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_records: usize,
    pub window: Window,
    pub input_dims: Dims,
    pub output_dims: Dims,
    pub specs: Vec<ParameterSpec>,
}

/// Solve every design row (in parallel) and window the trajectories.
pub fn generate_dataset(
    design: &DesignMatrix,
    setup: &SolverSetup,
    window: Window,
    seed: u64,
) -> Result<(Vec<SimulationRecord>, DatasetManifest)> {
    setup.check_specs(&design.specs)?;
    if window.t_in == 0 || window.t_out == 0 || window.t_in + window.t_out > setup.n_frames() {
        return Err(Error::config(format!(
            "window t_in={} t_out={} overflows the {}-frame {} trajectory",
            window.t_in,
            window.t_out,
            setup.n_frames(),
            setup.name()
        )));
    }
    let records: Vec<SimulationRecord> = design
        .rows
        .par_iter()
        .map(|row| {
            let traj = setup.trajectory(row)?;
            let (input, output) = window.split(&traj)?;
            Ok(SimulationRecord {
                params: row.clone(),
                input,
                output,
            })
        })
        .collect::<Result<_>>()?;
    let first = records
        .first()
        .ok_or_else(|| Error::config("empty design"))?;
    let config_hash = hash_json(&(setup, &design.specs, &design.rows, window, seed));
    let manifest = DatasetManifest {
        solver: *setup,
        solver_version: SOLVER_VERSION.to_string(),
        config_hash,
        seed,
        n_records: records.len(),
        window,
        input_dims: first.input.dims(),
        output_dims: first.output.dims(),
        specs: design.specs.clone(),
    };
    Ok((records, manifest))
}

/// Inputs and outputs as two stacks.
pub fn stack_records(records: &[SimulationRecord]) -> Result<(FieldStack, FieldStack)> {
    Ok((
        FieldStack::from_tensors(records.iter().map(|r| &r.input))?,
        FieldStack::from_tensors(records.iter().map(|r| &r.output))?,
    ))
}

/// Write `manifest.json`, `params.csv` and `input_<i>.cpt` / `output_<i>.cpt`.
pub fn save_dataset(dir: &Path, records: &[SimulationRecord], manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, r) in records.iter().enumerate() {
        tensor::save_tensor(&dir.join(format!("input_{i}.cpt")), &r.input)?;
        tensor::save_tensor(&dir.join(format!("output_{i}.cpt")), &r.output)?;
    }
    let design = DesignMatrix {
        specs: manifest.specs.clone(),
        rows: records.iter().map(|r| r.params.clone()).collect(),
        seed: manifest.seed,
    };
    let p = dir.join("params.csv");
    fs::write(&p, design.to_csv()).map_err(|e| Error::io(&p, e))?;
    // Manifest last: its presence marks a complete dataset.
    let p = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<SimulationRecord>, DatasetManifest)> {
    let manifest = load_manifest(dir)?;
    let p = dir.join("params.csv");
    let csv = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("params.csv: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.len() != manifest.n_records {
        return Err(Error::Format(format!(
            "params.csv has {} rows, manifest says {}",
            rows.len(),
            manifest.n_records
        )));
    }
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, params)| {
            let input = tensor::load_tensor(&dir.join(format!("input_{i}.cpt")), Finiteness::Finite)?;
            let output = tensor::load_tensor(&dir.join(format!("output_{i}.cpt")), Finiteness::Finite)?;
            if input.dims() != manifest.input_dims || output.dims() != manifest.output_dims {
                return Err(Error::Format(format!("record {i} dims disagree with manifest")));
            }
            Ok(SimulationRecord { params, input, output })
        })
        .collect::<Result<_>>()?;
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::latin_hypercube;

    fn poisson_design(n: usize) -> DesignMatrix {
        latin_hypercube(&[ParameterSpec::continuous("u_init", 0.0, 4.0)], n, 1).unwrap()
    }

    #[test]
    fn poisson_records() {
        let design = poisson_design(3);
        let (recs, man) =
            generate_dataset(&design, &SolverSetup::poisson(), Window { t_in: 1, t_out: 1 }, 5).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(man.input_dims, Dims::line(32));
        for r in &recs {
            assert!(r.input.data().iter().all(|&v| v == r.params[0]));
            let steady = super::super::solve_poisson_1d(&PoissonConfig {
                n_grid: 32,
                source: r.params[0],
            })
            .unwrap();
            assert_eq!(r.output, steady);
        }
    }

    #[test]
    fn convdiff_windows() {
        let specs = [
            ParameterSpec::continuous("k", 1.0, 2.0),
            ParameterSpec::continuous("c", 0.1, 0.5),
            ParameterSpec::continuous("mu", 1.0, 8.0),
            ParameterSpec::continuous("sigma2", 0.25, 0.75),
        ];
        let design = latin_hypercube(&specs, 2, 3).unwrap();
        let setup = SolverSetup::convdiff();
        let (recs, man) = generate_dataset(&design, &setup, Window { t_in: 10, t_out: 10 }, 3).unwrap();
        assert_eq!(man.output_dims, Dims::new(10, 200, 1, 1));
        let traj = setup.trajectory(&design.rows[1]).unwrap();
        assert_eq!(recs[1].input.data(), &traj.data()[..2000]);
        assert_eq!(recs[1].output.data(), &traj.data()[2000..]);
    }

    #[test]
    fn window_overflow_and_name_mismatch() {
        let design = poisson_design(2);
        let err = generate_dataset(&design, &SolverSetup::poisson(), Window { t_in: 2, t_out: 1 }, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = generate_dataset(&design, &SolverSetup::wave(1.0), Window { t_in: 1, t_out: 1 }, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn deterministic_and_persisted() {
        let design = poisson_design(4);
        let w = Window { t_in: 1, t_out: 1 };
        let a = generate_dataset(&design, &SolverSetup::poisson(), w, 9).unwrap();
        let b = generate_dataset(&design, &SolverSetup::poisson(), w, 9).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &a.0, &a.1).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, a);
    }
}
