//! Seeded random streams and Latin-hypercube designs.
//!
//! The generator is xoshiro256** (Blackman & Vigna) seeded through
//! SplitMix64, both implemented here so that datasets regenerate
//! identically on every platform. Constants:
//!
//! - SplitMix64: increment `0x9E3779B97F4A7C15`, mixers `0xBF58476D1CE4E5B9`
//!   and `0x94D049BB133111EB` with shifts 30/27/31.
//! - xoshiro256**: output `rotl(s1 * 5, 7) * 9`, state shift 17, rotation 45.
//!
//! Child streams are derived with [`child_seed`]:
//! `seed ^ ((index + 1) * 0xD1B54A32D192ED03)` (wrapping, odd multiplier),
//! then passed through SplitMix64 on construction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const CHILD_MULTIPLIER: u64 = 0xD1B5_4A32_D192_ED03;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent child of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(CHILD_MULTIPLIER)
}

/// xoshiro256** stream. A plain value type: clone it to fork the
/// sequence, or use [`Rng::child`] for an independent stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    pub fn child(seed: u64, index: u64) -> Self {
        Rng::new(child_seed(seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Continuous,
    DiscreteInteger,
}

/// One sampled parameter with range `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_kind")]
    pub kind: ParamKind,
}

fn default_kind() -> ParamKind {
    ParamKind::Continuous
}

impl ParameterSpec {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        ParameterSpec {
            name: name.into(),
            lo,
            hi,
            kind: ParamKind::Continuous,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(Error::config(format!(
                "parameter `{}`: need finite lo < hi, got [{}, {})",
                self.name, self.lo, self.hi
            )));
        }
        if self.kind == ParamKind::DiscreteInteger
            && (self.lo.fract() != 0.0 || self.hi.fract() != 0.0)
        {
            return Err(Error::config(format!(
                "parameter `{}`: discrete bounds must be integral",
                self.name
            )));
        }
        Ok(())
    }
}

/// `n x d` Latin-hypercube sample with its specs and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub specs: Vec<ParameterSpec>,
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Value of the named parameter in row `i`.
    pub fn value(&self, i: usize, name: &str) -> Option<f64> {
        let j = self.specs.iter().position(|s| s.name == name)?;
        self.rows.get(i).map(|r| r[j])
    }

    /// CSV with a header of parameter names; values use shortest round-trip
    /// formatting so the file reloads bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = self.names().join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Latin-hypercube design: each column is split into `n` equal strata and
/// receives exactly one uniformly jittered sample per stratum, with strata
/// assigned to rows by an independent random permutation per column.
pub fn latin_hypercube(specs: &[ParameterSpec], n: usize, seed: u64) -> Result<DesignMatrix> {
    if specs.is_empty() {
        return Err(Error::config("latin hypercube needs at least one parameter"));
    }
    if n == 0 {
        return Err(Error::config("latin hypercube needs n >= 1"));
    }
    for s in specs {
        s.validate()?;
    }
    let mut rng = Rng::new(seed);
    let mut rows = vec![Vec::with_capacity(specs.len()); n];
    for spec in specs {
        let perm = rng.permutation(n);
        let width = (spec.hi - spec.lo) / n as f64;
        for (row, &stratum) in rows.iter_mut().zip(&perm) {
            let mut v = spec.lo + width * (stratum as f64 + rng.uniform());
            if v >= spec.hi {
                v = spec.hi.next_down();
            }
            if spec.kind == ParamKind::DiscreteInteger {
                v = v.round().clamp(spec.lo, spec.hi - 1.0);
            }
            row.push(v);
        }
    }
    Ok(DesignMatrix {
        specs: specs.to_vec(),
        rows,
        seed,
    })
}
