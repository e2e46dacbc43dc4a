//! Desk-scale PDE solvers and IVP windowing.
//!
//! All solvers are deterministic functions of their config; randomness
//! enters only through the design matrix that parameterises them.

mod convdiff;
mod dataset;
mod poisson;
mod wave;

pub use convdiff::{convdiff_state_after, solve_convdiff_1d, ConvDiffConfig, Diffusion, DIFFUSION_FLOOR};
pub use dataset::{
    generate_dataset, load_dataset, load_manifest, save_dataset, stack_records, DatasetManifest,
    SimulationRecord, SolverSetup, Window, SOLVER_VERSION,
};
pub use poisson::{poisson_trajectory, solve_poisson_1d, PoissonConfig};
pub use wave::{solve_wave_2d, staggered_energy, WaveConfig, WaveInitial};
