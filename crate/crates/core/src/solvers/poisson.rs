use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FieldTensor};

/// `u'' = rho` on `[0, 1]` with `u(0) = u(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonConfig {
    pub n_grid: usize,
    pub source: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            n_grid: 32,
            source: 0.0,
        }
    }
}

impl PoissonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 {
            return Err(Error::config(format!(
                "poisson n_grid must be >= 3, got {}",
                self.n_grid
            )));
        }
        if !self.source.is_finite() {
            return Err(Error::config("poisson source must be finite"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = 1.0 / (self.n_grid - 1) as f64;
        (0..self.n_grid).map(|i| i as f64 * h).collect()
    }
}

/// Steady field `[1, n_grid, 1, 1]` by Thomas elimination of the
/// second-order central-difference system.
pub fn solve_poisson_1d(cfg: &PoissonConfig) -> Result<FieldTensor> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let h = 1.0 / (n - 1) as f64;
    let m = n - 2;
    // Interior system: u[i-1] - 2 u[i] + u[i+1] = h^2 rho, Dirichlet zeros folded in.
    let rhs = vec![h * h * cfg.source; m];
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    let (a, b, c) = (1.0, -2.0, 1.0);
    c_prime[0] = c / b;
    d_prime[0] = rhs[0] / b;
    for i in 1..m {
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (rhs[i] - a * d_prime[i - 1]) / denom;
    }
    let mut u = vec![0.0; n];
    u[m] = d_prime[m - 1];
    for i in (0..m - 1).rev() {
        u[i + 1] = d_prime[i] - c_prime[i] * u[i + 2];
    }
    FieldTensor::new(Dims::line(n), u)
}

/// Two-frame trajectory: the uniform initial field and its steady state.
pub fn poisson_trajectory(cfg: &PoissonConfig) -> Result<FieldTensor> {
    let steady = solve_poisson_1d(cfg)?;
    let mut data = vec![cfg.source; cfg.n_grid];
    data.extend_from_slice(steady.data());
    FieldTensor::new(Dims::new(2, cfg.n_grid, 1, 1), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(rho: f64, x: f64) -> f64 {
        0.5 * rho * (x * x - x)
    }

    #[test]
    fn zero_source_is_zero() {
        let u = solve_poisson_1d(&PoissonConfig::default()).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn midpoint_value() {
        let cfg = PoissonConfig {
            n_grid: 33,
            source: 2.0,
        };
        let u = solve_poisson_1d(&cfg).unwrap();
        assert!((u.data()[16] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn matches_closed_form() {
        for rho in [0.3, 1.0, 3.99] {
            let cfg = PoissonConfig {
                n_grid: 32,
                source: rho,
            };
            let u = solve_poisson_1d(&cfg).unwrap();
            for (x, v) in cfg.grid().iter().zip(u.data()) {
                assert!((v - closed_form(rho, *x)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn linear_in_source() {
        let a = solve_poisson_1d(&PoissonConfig { n_grid: 32, source: 2.0 }).unwrap();
        let b = solve_poisson_1d(&PoissonConfig { n_grid: 32, source: 4.0 }).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn small_grid_rejected() {
        assert!(solve_poisson_1d(&PoissonConfig { n_grid: 2, source: 1.0 }).is_err());
        let u = solve_poisson_1d(&PoissonConfig { n_grid: 3, source: 8.0 }).unwrap();
        assert_eq!(u.data(), &[0.0, -1.0, 0.0]);
    }
}
