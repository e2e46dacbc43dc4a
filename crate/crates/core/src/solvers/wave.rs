use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, FieldTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveInitial {
    /// `exp(-amplitude * ((x - x_pos)^2 + (y - y_pos)^2))`.
    Gaussian { amplitude: f64, x_pos: f64, y_pos: f64 },
    /// `sin(kx pi (x + 1) / 2) sin(ky pi (y + 1) / 2)`, an eigenmode of the
    /// Dirichlet Laplacian on `[-1, 1]^2`.
    StandingMode { kx: u32, ky: u32 },
}

/// `u_tt = c^2 (u_xx + u_yy)` on `[-1, 1]^2`, `u = 0` on the boundary,
/// zero initial velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub initial: WaveInitial,
    pub speed: f64,
    pub n_grid: usize,
    pub n_steps: usize,
    pub dt: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        WaveConfig {
            initial: WaveInitial::Gaussian {
                amplitude: 30.0,
                x_pos: 0.3,
                y_pos: 0.3,
            },
            speed: 1.0,
            n_grid: 33,
            n_steps: 150,
            dt: 0.00667,
        }
    }
}

impl WaveConfig {
    pub fn dx(&self) -> f64 {
        2.0 / (self.n_grid - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.dx();
        (0..self.n_grid).map(|i| -1.0 + i as f64 * h).collect()
    }

    pub fn cfl(&self) -> f64 {
        self.speed * self.dt / self.dx()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 || self.n_steps == 0 {
            return Err(Error::config("wave needs n_grid >= 3 and n_steps >= 1"));
        }
        if !(self.speed > 0.0 && self.dt > 0.0) {
            return Err(Error::config("wave speed and dt must be positive"));
        }
        if self.cfl() > std::f64::consts::FRAC_1_SQRT_2 {
            return Err(Error::config(format!(
                "CFL violated: c dt / dx = {:.4} > 1/sqrt(2)",
                self.cfl()
            )));
        }
        if let WaveInitial::Gaussian { amplitude, x_pos, y_pos } = self.initial {
            if !(amplitude.is_finite() && x_pos.is_finite() && y_pos.is_finite()) {
                return Err(Error::config("wave initial condition must be finite"));
            }
        }
        Ok(())
    }

    /// Initial field with the boundary ring set to zero.
    pub fn initial_condition(&self) -> Vec<f64> {
        let n = self.n_grid;
        let g = self.grid();
        let mut u = vec![0.0; n * n];
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let (x, y) = (g[i], g[j]);
                u[i * n + j] = match self.initial {
                    WaveInitial::Gaussian { amplitude, x_pos, y_pos } => {
                        (-amplitude * ((x - x_pos).powi(2) + (y - y_pos).powi(2))).exp()
                    }
                    WaveInitial::StandingMode { kx, ky } => {
                        let pi = std::f64::consts::PI;
                        (kx as f64 * pi * (x + 1.0) / 2.0).sin() * (ky as f64 * pi * (y + 1.0) / 2.0).sin()
                    }
                };
            }
        }
        u
    }
}

/// Five-point Laplacian on interior nodes; boundary entries left at zero.
fn laplacian(u: &[f64], n: usize, inv_h2: f64, out: &mut [f64]) {
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let k = i * n + j;
            out[k] = (u[k - n] + u[k + n] + u[k - 1] + u[k + 1] - 4.0 * u[k]) * inv_h2;
        }
    }
}

/// Leapfrog trajectory `[n_steps, n, n, 1]`; frame `s` is the field at `t = s dt`.
pub fn solve_wave_2d(cfg: &WaveConfig) -> Result<FieldTensor> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let cells = n * n;
    let inv_h2 = 1.0 / (cfg.dx() * cfg.dx());
    let r = (cfg.speed * cfg.dt).powi(2);

    let mut data = Vec::with_capacity(cfg.n_steps * cells);
    let mut prev = cfg.initial_condition();
    data.extend_from_slice(&prev);
    if cfg.n_steps == 1 {
        return FieldTensor::new(Dims::new(1, n, n, 1), data);
    }

    let mut lap = vec![0.0; cells];
    laplacian(&prev, n, inv_h2, &mut lap);
    // Zero initial velocity: u^1 = u^0 + (c dt)^2 / 2 * L u^0.
    let mut curr: Vec<f64> = prev.iter().zip(&lap).map(|(u, l)| u + 0.5 * r * l).collect();
    data.extend_from_slice(&curr);
    let mut next = vec![0.0; cells];
    for step in 2..cfg.n_steps {
        laplacian(&curr, n, inv_h2, &mut lap);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                next[k] = 2.0 * curr[k] - prev[k] + r * lap[k];
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                at: format!("wave step {step}"),
                detail: "non-finite field".into(),
            });
        }
        data.extend_from_slice(&next);
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
    }
    FieldTensor::new(Dims::new(cfg.n_steps, n, n, 1), data)
}

/// Leapfrog energy between consecutive frames `a = u^n`, `b = u^{n+1}`:
/// `sum(((b - a) / dt)^2 + c^2 grad(a) . grad(b)) dx dy`, summed over
/// interior nodes and grid edges. Exactly conserved by the scheme.
pub fn staggered_energy(cfg: &WaveConfig, a: &[f64], b: &[f64]) -> f64 {
    let n = cfg.n_grid;
    let h = cfg.dx();
    let mut kinetic = 0.0;
    for k in 0..n * n {
        kinetic += ((b[k] - a[k]) / cfg.dt).powi(2);
    }
    let mut potential = 0.0;
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if i + 1 < n {
                potential += (a[k + n] - a[k]) * (b[k + n] - b[k]);
            }
            if j + 1 < n {
                potential += (a[k + 1] - a[k]) * (b[k + 1] - b[k]);
            }
        }
    }
    (kinetic + cfg.speed.powi(2) * potential / (h * h)) * h * h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(t: &FieldTensor, n: usize) -> Vec<&[f64]> {
        t.data().chunks_exact(n * n).collect()
    }

    #[test]
    fn zero_initial_field_stays_zero() {
        let cfg = WaveConfig {
            initial: WaveInitial::StandingMode { kx: 0, ky: 1 },
            ..Default::default()
        };
        let traj = solve_wave_2d(&cfg).unwrap();
        assert!(traj.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standing_mode_matches_cosine() {
        let cfg = WaveConfig {
            initial: WaveInitial::StandingMode { kx: 1, ky: 1 },
            ..Default::default()
        };
        let traj = solve_wave_2d(&cfg).unwrap();
        let ic = cfg.initial_condition();
        let omega = cfg.speed * std::f64::consts::PI * 2f64.sqrt() / 2.0;
        let (mut err, mut norm) = (0.0, 0.0);
        for (s, f) in frames(&traj, cfg.n_grid).iter().enumerate() {
            let c = (omega * s as f64 * cfg.dt).cos();
            for (u, u0) in f.iter().zip(&ic) {
                err += (u - c * u0).powi(2);
                norm += (c * u0).powi(2);
            }
        }
        let rel = (err / norm).sqrt();
        assert!(rel <= 5e-2, "relative L2 {rel:e}");
    }

    #[test]
    fn energy_drift_within_one_percent() {
        let cfg = WaveConfig::default();
        let traj = solve_wave_2d(&cfg).unwrap();
        let f = frames(&traj, cfg.n_grid);
        let e0 = staggered_energy(&cfg, f[0], f[1]);
        for w in f.windows(2) {
            let e = staggered_energy(&cfg, w[0], w[1]);
            assert!(((e - e0) / e0).abs() <= 1e-2, "{e0} -> {e}");
        }
    }

    #[test]
    fn dirichlet_ring_is_zero() {
        let cfg = WaveConfig {
            n_grid: 17,
            initial: WaveInitial::Gaussian { amplitude: 10.0, x_pos: 0.5, y_pos: 0.5 },
            ..Default::default()
        };
        let traj = solve_wave_2d(&cfg).unwrap();
        let n = cfg.n_grid;
        for f in frames(&traj, n) {
            for i in 0..n {
                for k in [i, (n - 1) * n + i, i * n, i * n + n - 1] {
                    assert_eq!(f[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn first_frame_is_gaussian() {
        let cfg = WaveConfig::default();
        let traj = solve_wave_2d(&cfg).unwrap();
        let g = cfg.grid();
        let n = cfg.n_grid;
        let (i, j) = (20, 21);
        let expect = (-30.0 * ((g[i] - 0.3f64).powi(2) + (g[j] - 0.3f64).powi(2))).exp();
        assert_eq!(traj.get([0, i, j, 0]), Some(expect));
        assert_eq!(traj.dims(), Dims::new(150, n, n, 1));
    }

    #[test]
    fn cfl_enforced() {
        let cfg = WaveConfig {
            dt: 0.05,
            ..Default::default()
        };
        assert!(matches!(solve_wave_2d(&cfg), Err(Error::Config(_))));
    }
}
