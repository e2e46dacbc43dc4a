//! Special functions for the coverage law: log-gamma, the regularized
//! incomplete Beta function, Beta quantiles, and a one-sample
//! Kolmogorov-Smirnov test.

use crate::error::{Error, Result};

/// Absolute tolerance of [`beta_quantile`].
pub const QUANTILE_TOL: f64 = 1e-10;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Lentz evaluation of the incomplete-Beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 100_000;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete Beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "inc_beta needs a, b > 0");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `p`-quantile of `Beta(a, b)` by bisection on [`inc_beta`].
pub fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if inc_beta(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rank `k = ceil((n + 1)(1 - alpha))` of the conformal order statistic.
///
/// The product is rounded down by a relative `1e-12` before the ceiling so
/// that values like `10 * 0.9 = 9.000000000000002` resolve to the exact
/// integer.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - 1e-12 * x.abs().max(1.0)).ceil().max(1.0) as usize
}

/// Finite-sample law of per-cell coverage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageLaw {
    pub n_cal: usize,
    pub alpha: f64,
    pub mass: f64,
    /// Beta parameters `(k, n_cal + 1 - k)`; `b == 0` marks the degenerate
    /// law at 1 (rank overflow, infinite band).
    pub a: f64,
    pub b: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CoverageLaw {
    pub fn is_degenerate(&self) -> bool {
        self.b == 0.0
    }

    /// Half-width of the central interval.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return if x >= 1.0 { 1.0 } else { 0.0 };
        }
        inc_beta(self.a, self.b, x)
    }
}

/// Coverage law `Beta(k, n_cal + 1 - k)`, `k = ceil((n_cal + 1)(1 - alpha))`,
/// with its mean `k / (n_cal + 1)` and central interval of probability `mass`.
pub fn coverage_beta(n_cal: usize, alpha: f64, mass: f64) -> Result<CoverageLaw> {
    if n_cal == 0 {
        return Err(Error::config("coverage law needs n_cal >= 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::config(format!("interval mass must be in (0, 1), got {mass}")));
    }
    let k = conformal_rank(n_cal, alpha);
    if k > n_cal {
        return Ok(CoverageLaw {
            n_cal,
            alpha,
            mass,
            a: (n_cal + 1) as f64,
            b: 0.0,
            mean: 1.0,
            lo: 1.0,
            hi: 1.0,
        });
    }
    let a = k as f64;
    let b = (n_cal + 1 - k) as f64;
    let tail = 0.5 * (1.0 - mass);
    Ok(CoverageLaw {
        n_cal,
        alpha,
        mass,
        a,
        b,
        mean: a / (a + b),
        lo: beta_quantile(a, b, tail),
        hi: beta_quantile(a, b, 1.0 - tail),
    })
}

/// One-sample KS statistic `sup |F_n - F|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value `Q_KS((sqrt(n) + 0.12 + 0.11 / sqrt(n)) D)` of the
/// Kolmogorov distribution.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Standard normal quantile (Acklam's rational approximation refined by one
/// Halley step on an erfc evaluation; absolute error below 1e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile needs p in (0, 1)");
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `I_x(a, b)` for integer `a, b` as a binomial tail, with log factorials
    /// summed directly (independent of the Lanczos series).
    fn binomial_tail(a: usize, b: usize, x: f64) -> f64 {
        let n = a + b - 1;
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=n).scan(0.0, |acc, k| {
                *acc += (k as f64).ln();
                Some(*acc)
            }))
            .collect();
        (a..=n)
            .map(|j| {
                (ln_fact[n] - ln_fact[j] - ln_fact[n - j] + j as f64 * x.ln() + (n - j) as f64 * (1.0 - x).ln())
                    .exp()
            })
            .sum()
    }

    #[test]
    fn ln_gamma_factorials() {
        let mut f = 0.0f64;
        for n in 1..60usize {
            assert!((ln_gamma(n as f64) - f).abs() < 1e-12 * f.abs().max(1.0), "n={n}");
            f += (n as f64).ln();
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn inc_beta_matches_binomial_tail() {
        for &(a, b) in &[(1, 1), (2, 5), (91, 10), (901, 100), (226, 26)] {
            for &x in &[0.05, 0.3, 0.5, 0.85, 0.9, 0.93, 0.99] {
                let got = inc_beta(a as f64, b as f64, x);
                let want = binomial_tail(a, b, x);
                assert!((got - want).abs() < 1e-10, "I_{x}({a},{b}) = {got} vs {want}");
            }
        }
    }

    #[test]
    fn inc_beta_symmetry_and_uniform() {
        assert!((inc_beta(1.0, 1.0, 0.37) - 0.37).abs() < 1e-15);
        let (a, b, x) = (3.5, 7.25, 0.2);
        assert!((inc_beta(a, b, x) + inc_beta(b, a, 1.0 - x) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &(a, b) in &[(91.0, 10.0), (901.0, 100.0), (2.0, 3.0)] {
            for &p in &[0.005, 0.5, 0.995] {
                let q = beta_quantile(a, b, p);
                assert!((inc_beta(a, b, q) - p).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rank_rule() {
        assert_eq!(conformal_rank(1000, 0.1), 901);
        assert_eq!(conformal_rank(5, 0.05), 6);
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(conformal_rank(100, 0.1), 91);
        assert_eq!(conformal_rank(19, 0.05), 19);
    }

    #[test]
    fn law_parameters() {
        let law = coverage_beta(1000, 0.1, 0.99).unwrap();
        assert_eq!((law.a, law.b), (901.0, 100.0));
        assert!((law.mean - 901.0 / 1001.0).abs() < 1e-15);
        assert!(law.lo < law.mean && law.mean < law.hi);
        let overflow = coverage_beta(5, 0.05, 0.99).unwrap();
        assert!(overflow.is_degenerate());
        assert_eq!((overflow.mean, overflow.lo, overflow.hi), (1.0, 1.0, 1.0));
        assert!(coverage_beta(0, 0.1, 0.99).is_err());
        assert!(coverage_beta(10, 1.0, 0.99).is_err());
        assert!(coverage_beta(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn half_width_shrinks_with_n() {
        let w250 = coverage_beta(250, 0.1, 0.99).unwrap().half_width();
        let w1000 = coverage_beta(1000, 0.1, 0.99).unwrap().half_width();
        assert!(w250 > w1000);
    }

    #[test]
    fn ks_pvalue_reference_points() {
        // Critical value of the Kolmogorov distribution at 1%: lambda = 1.6276.
        let n = 10_000;
        let d = 1.6276 / ((n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt());
        assert!((ks_pvalue(d, n) - 0.01).abs() < 1e-4);
        assert!(ks_pvalue(0.0, n) == 1.0);
    }

    #[test]
    fn normal_quantile_points() {
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-8);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.01) + 2.326_347_874_040_841).abs() < 1e-8);
    }
}
