use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FieldTensor};

/// Lower clamp applied to the sine diffusion profile.
pub const DIFFUSION_FLOOR: f64 = 1e-4;

/// Spatial diffusion profile `D(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusion {
    /// `D(x) = max(sin(x / (k pi)), 1e-4)`.
    Sine { k: f64 },
    Constant(f64),
}

impl Diffusion {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Diffusion::Sine { k } => (x / (k * std::f64::consts::PI)).sin().max(DIFFUSION_FLOOR),
            Diffusion::Constant(d) => d,
        }
    }

    /// `dD/dx`; zero where the sine profile is clamped.
    pub fn slope(&self, x: f64) -> f64 {
        match *self {
            Diffusion::Sine { k } => {
                let w = 1.0 / (k * std::f64::consts::PI);
                if (x * w).sin() > DIFFUSION_FLOOR {
                    w * (x * w).cos()
                } else {
                    0.0
                }
            }
            Diffusion::Constant(_) => 0.0,
        }
    }
}

/// `u_t = D u_xx + u D_x - c u_x` on `[0, length]` with no-flux ends and
/// Gaussian initial condition `exp(-(x - mu)^2 / (2 sigma2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvDiffConfig {
    pub diffusion: Diffusion,
    pub velocity: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub n_grid: usize,
    pub length: f64,
    pub n_steps: usize,
    pub dt: f64,
    /// Store every `stride`-th step, starting with the initial condition.
    pub stride: usize,
}

impl Default for ConvDiffConfig {
    fn default() -> Self {
        ConvDiffConfig {
            diffusion: Diffusion::Sine { k: 1.5 },
            velocity: 0.3,
            mu: 5.0,
            sigma2: 0.5,
            n_grid: 200,
            length: 10.0,
            n_steps: 100,
            dt: 0.0005,
            stride: 5,
        }
    }
}

impl ConvDiffConfig {
    pub fn dx(&self) -> f64 {
        self.length / (self.n_grid - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_grid).map(|i| i as f64 * dx).collect()
    }

    pub fn n_frames(&self) -> usize {
        self.n_steps / self.stride
    }

    pub fn validate(&self) -> Result<()> {
        if let Diffusion::Sine { k } = self.diffusion {
            if !(k > 0.0) {
                return Err(Error::config(format!("diffusion family k must be > 0, got {k}")));
            }
        }
        if let Diffusion::Constant(d) = self.diffusion {
            if !(d >= 0.0) {
                return Err(Error::config(format!("constant diffusion must be >= 0, got {d}")));
            }
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::config(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if self.n_grid < 3 || self.stride == 0 || self.n_steps < self.stride {
            return Err(Error::config("convdiff needs n_grid >= 3 and 1 <= stride <= n_steps"));
        }
        if !(self.dt > 0.0 && self.length > 0.0 && self.velocity.is_finite() && self.mu.is_finite()) {
            return Err(Error::config("convdiff dt, length, velocity and mu must be finite, dt and length positive"));
        }
        let dx = self.dx();
        let max_d = self
            .grid()
            .iter()
            .map(|&x| self.diffusion.value(x))
            .fold(0.0, f64::max);
        let bound = dx * dx / (2.0 * max_d + self.velocity.abs() * dx);
        if self.dt > bound {
            return Err(Error::config(format!(
                "FTCS stability violated: dt = {} > dx^2 / (2 max D + |c| dx) = {bound:.3e}",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn initial_condition(&self) -> Vec<f64> {
        self.grid()
            .iter()
            .map(|&x| (-(x - self.mu).powi(2) / (2.0 * self.sigma2)).exp())
            .collect()
    }
}

struct Stepper {
    d: Vec<f64>,
    d_slope: Vec<f64>,
    dt: f64,
    inv_dx2: f64,
    c_over_2dx: f64,
    next: Vec<f64>,
}

impl Stepper {
    fn new(cfg: &ConvDiffConfig) -> Self {
        let grid = cfg.grid();
        let dx = cfg.dx();
        Stepper {
            d: grid.iter().map(|&x| cfg.diffusion.value(x)).collect(),
            d_slope: grid.iter().map(|&x| cfg.diffusion.slope(x)).collect(),
            dt: cfg.dt,
            inv_dx2: 1.0 / (dx * dx),
            c_over_2dx: cfg.velocity / (2.0 * dx),
            next: vec![0.0; cfg.n_grid],
        }
    }

    /// One forward-Euler step; ghost cells mirror the first interior node.
    fn step(&mut self, u: &mut Vec<f64>) {
        let n = u.len();
        for i in 0..n {
            let left = if i == 0 { u[1] } else { u[i - 1] };
            let right = if i == n - 1 { u[n - 2] } else { u[i + 1] };
            let lap = (left - 2.0 * u[i] + right) * self.inv_dx2;
            let adv = (right - left) * self.c_over_2dx;
            self.next[i] = u[i] + self.dt * (self.d[i] * lap + u[i] * self.d_slope[i] - adv);
        }
        std::mem::swap(u, &mut self.next);
    }
}

/// Full field after `steps` steps (not downsampled).
pub fn convdiff_state_after(cfg: &ConvDiffConfig, steps: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut u = cfg.initial_condition();
    let mut stepper = Stepper::new(cfg);
    for s in 1..=steps {
        stepper.step(&mut u);
        check_finite(&u, s)?;
    }
    Ok(u)
}

fn check_finite(u: &[f64], step: usize) -> Result<()> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            at: format!("convdiff step {step}"),
            detail: "non-finite field".into(),
        })
    }
}

/// FTCS trajectory downsampled to `[n_steps / stride, n_grid, 1, 1]`;
/// frame `f` holds step `f * stride`.
pub fn solve_convdiff_1d(cfg: &ConvDiffConfig) -> Result<FieldTensor> {
    cfg.validate()?;
    let n_frames = cfg.n_frames();
    let mut u = cfg.initial_condition();
    let mut stepper = Stepper::new(cfg);
    let mut data = Vec::with_capacity(n_frames * cfg.n_grid);
    data.extend_from_slice(&u);
    for s in 1..n_frames * cfg.stride {
        stepper.step(&mut u);
        check_finite(&u, s)?;
        if s % cfg.stride == 0 {
            data.extend_from_slice(&u);
        }
    }
    FieldTensor::new(Dims::new(n_frames, cfg.n_grid, 1, 1), data)
}
