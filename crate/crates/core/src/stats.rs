//! Test statistics and their reports.
//!
//! Every verdict is a [`TestReport`] carrying the statistic, an optional
//! p-value, the declared threshold and decision [`Rule`], and the
//! [`Provenance`] of the sample it was computed from.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::exit::Method;
use crate::math;

/// Tolerance on `| ‖v‖ − 1 |` accepted as unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Default significance threshold for p-value tests.
pub const DEFAULT_P_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    PValueAbove,
    StatisticAtMost,
    StatisticAtLeast,
}

impl Rule {
    pub fn holds(self, statistic: f64, p_value: Option<f64>, threshold: f64) -> bool {
        match self {
            Rule::PValueAbove => p_value.is_some_and(|p| p > threshold),
            Rule::StatisticAtMost => statistic <= threshold,
            Rule::StatisticAtLeast => statistic >= threshold,
        }
    }
}

/// Where a sample came from: scaling index, step, detection method, seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n: u64,
    pub h: f64,
    pub method: Method,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Number(f64),
    Text(String),
}

impl From<f64> for MetaValue {
    fn from(v: f64) -> Self {
        MetaValue::Number(v)
    }
}

impl From<&str> for MetaValue {
    fn from(v: &str) -> Self {
        MetaValue::Text(v.to_string())
    }
}

impl From<String> for MetaValue {
    fn from(v: String) -> Self {
        MetaValue::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub threshold: f64,
    pub rule: Rule,
    pub pass: bool,
    pub sample_sizes: (usize, usize),
    pub provenance: Provenance,
    /// Diagnostic reports are recorded but do not decide a run's outcome.
    pub gating: bool,
    pub metadata: BTreeMap<String, MetaValue>,
}

impl TestReport {
    pub fn new(
        test_name: impl Into<String>,
        statistic: f64,
        p_value: Option<f64>,
        threshold: f64,
        rule: Rule,
        sample_sizes: (usize, usize),
        provenance: Provenance,
    ) -> Self {
        Self {
            test_name: test_name.into(),
            statistic,
            p_value,
            threshold,
            rule,
            pass: rule.holds(statistic, p_value, threshold),
            sample_sizes,
            provenance,
            gating: true,
            metadata: BTreeMap::new(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.test_name = name.into();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<MetaValue>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn diagnostic(mut self) -> Self {
        self.gating = false;
        self
    }

    /// Re-applies the rule with a different threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self.pass = self.rule.holds(self.statistic, self.p_value, threshold);
        self
    }

    /// Whether `pass` agrees with the rule applied to the stored numbers.
    pub fn is_consistent(&self) -> bool {
        self.pass
            == self
                .rule
                .holds(self.statistic, self.p_value, self.threshold)
    }
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(domain("sample contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `sup_x |F₁(x) − F₂(x)|` for two empirical CDFs.
pub fn ks_statistic(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(domain("KS test needs two non-empty samples"));
    }
    let a = sorted(s1)?;
    let b = sorted(s2)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda.is_nan() {
        return f64::NAN;
    }
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi theta form converges fast for small λ.
        let c = core::f64::consts::PI * core::f64::consts::PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            let term = math::exp(-m * m * c);
            s += term;
            if term < 1e-18 {
                break;
            }
        }
        let cdf = math::sqrt(2.0 * core::f64::consts::PI) / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = math::exp(-2.0 * kf * kf * lambda * lambda);
        s += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic two-sample p-value for a KS distance `d` with sample sizes
/// `n1`, `n2`.
pub fn ks_p_value(d: f64, n1: usize, n2: usize) -> f64 {
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let root = math::sqrt(ne);
    kolmogorov_q((root + 0.12 + 0.11 / root) * d)
}

/// Two-sample Kolmogorov–Smirnov test, passing when `p > threshold`.
pub fn ks_two_sample(
    s1: &[f64],
    s2: &[f64],
    threshold: f64,
    provenance: Provenance,
) -> Result<TestReport> {
    let d = ks_statistic(s1, s2)?;
    let p = ks_p_value(d, s1.len(), s2.len());
    Ok(TestReport::new(
        "ks_two_sample",
        d,
        Some(p),
        threshold,
        Rule::PValueAbove,
        (s1.len(), s2.len()),
        provenance,
    ))
}

/// Lévy distance between two empirical CDFs: the least `ε` with
/// `F₁(x − ε) − ε ≤ F₂(x) ≤ F₁(x + ε) + ε` for all `x`. Unlike the KS
/// distance it is small for laws whose atoms are slightly displaced.
pub fn levy_distance(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(domain("Lévy distance needs two non-empty samples"));
    }
    let a = sorted(s1)?;
    let b = sorted(s2)?;
    let cdf = |s: &[f64], x: f64| s.partition_point(|v| *v <= x) as f64 / s.len() as f64;
    // sup_x F(x) − G(x + ε) is attained at the atoms of F.
    let dominated =
        |f: &[f64], g: &[f64], eps: f64| f.iter().all(|&x| cdf(f, x) <= cdf(g, x + eps) + eps);
    let ok = |eps: f64| dominated(&a, &b, eps) && dominated(&b, &a, eps);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if ok(0.0) {
        return Ok(0.0);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        let pi = core::f64::consts::PI;
        return math::ln(pi / math::sin(pi * x).abs()) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * math::ln(2.0 * core::f64::consts::PI) + (x + 0.5) * math::ln(t) - t + math::ln(acc)
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let lead = a * math::ln(x) - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (1.0 - sum * math::exp(lead)).clamp(0.0, 1.0)
    } else {
        // Modified Lentz continued fraction.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (math::exp(lead) * h).clamp(0.0, 1.0)
    }
}

/// Survival function of `χ²(k)`.
pub fn chi2_sf(x: f64, k: usize) -> f64 {
    gamma_q(k as f64 / 2.0, x / 2.0)
}

/// Standard normal quantile (Acklam's rational approximation with one Halley
/// step against `erfc`).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain("normal quantile needs p in (0, 1)"));
    }
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
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let low = 0.02425;
    let mut x = if p < low {
        tail(math::sqrt(-2.0 * math::ln(p)))
    } else if p > 1.0 - low {
        -tail(math::sqrt(-2.0 * math::ln(1.0 - p)))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * math::sqrt(2.0 * core::f64::consts::PI) * math::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
    Ok(x)
}

/// χ² statistic of `counts` against equal expected counts.
pub fn chi2_equal_bins(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let diff = c as f64 - expected;
            diff * diff / expected
        })
        .sum()
}

/// Angular bin of a planar vector among `bins` equal sectors starting at
/// angle `−π`.
pub fn angular_bin(v: &[f64], bins: usize) -> usize {
    let two_pi = 2.0 * core::f64::consts::PI;
    let theta = math::atan2(v[1], v[0]) + core::f64::consts::PI;
    let b = math::floor(theta / two_pi * bins as f64) as usize;
    b.min(bins - 1)
}

/// χ² test of uniformity on the unit circle over `bins` equal angular
/// sectors, passing when `p > threshold`.
pub fn chi2_sphere_uniformity<V: AsRef<[f64]>>(
    values: &[V],
    bins: usize,
    threshold: f64,
    provenance: Provenance,
) -> Result<TestReport> {
    if bins < 2 {
        return Err(domain("need at least two bins"));
    }
    if values.len() < 5 * bins {
        return Err(domain("need at least five points per bin"));
    }
    let mut counts = vec![0u64; bins];
    for v in values {
        let v = v.as_ref();
        if v.len() != 2 {
            return Err(domain("angular uniformity is implemented for d = 2 only"));
        }
        if (math::norm(v) - 1.0).abs() > UNIT_NORM_TOL {
            return Err(domain("values must have unit norm"));
        }
        counts[angular_bin(v, bins)] += 1;
    }
    let stat = chi2_equal_bins(&counts);
    let p = chi2_sf(stat, bins - 1);
    Ok(TestReport::new(
        "chi2_sphere_uniformity",
        stat,
        Some(p),
        threshold,
        Rule::PValueAbove,
        (values.len(), bins),
        provenance,
    ))
}

/// Fraction of `values` that are `≥ level`.
pub fn exceedance_fraction(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(domain("exceedance needs a non-empty sample"));
    }
    Ok(values.iter().filter(|v| **v >= level).count() as f64 / values.len() as f64)
}

/// Exceedance fraction of per-path suprema over `ε`, judged with `rule`
/// (at least `threshold` for non-tightness, at most for controls).
pub fn tightness_diagnostic(
    suprema: &[f64],
    epsilon: f64,
    threshold: f64,
    rule: Rule,
    provenance: Provenance,
) -> Result<TestReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain("epsilon must lie in (0, 1)"));
    }
    if rule == Rule::PValueAbove {
        return Err(domain("the tightness diagnostic has no p-value"));
    }
    let fraction = exceedance_fraction(suprema, epsilon)?;
    Ok(TestReport::new(
        "tightness_diagnostic",
        fraction,
        None,
        threshold,
        rule,
        (suprema.len(), 0),
        provenance,
    )
    .with_meta("epsilon", epsilon))
}

/// Sample mean and normal-approximation half-width at `confidence`.
pub fn mean_with_ci(values: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(domain("need at least two values"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(domain("confidence must lie in (0, 1)"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(domain("values must be finite"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let z = normal_quantile(0.5 + 0.5 * confidence)?;
    Ok((mean, z * math::sqrt(var / n)))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(domain("need at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(domain("abscissae are all equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prov() -> Provenance {
        Provenance {
            n: 1,
            h: 0.01,
            method: Method::Naive,
            seed: 0,
        }
    }

    #[test]
    fn kolmogorov_oracles() {
        let cases = [
            (0.3, 0.9999906941986655),
            (0.5, 0.9639452436648751),
            (1.0, 0.26999967167735456),
            (1.36, 0.049485876755377876),
            (1.63, 0.009846364888486529),
            (2.5, 7.453306344157342e-06),
        ];
        for (l, q) in cases {
            assert_relative_eq!(kolmogorov_q(l), q, max_relative = 1e-10);
        }
        assert_relative_eq!(
            kolmogorov_q(0.999_999),
            kolmogorov_q(1.000_001),
            max_relative = 1e-5
        );
    }

    #[test]
    fn chi2_oracles() {
        let cases = [
            (7.0, 7, 0.42887985755305486),
            (14.067, 7, 0.050002444680797654),
            (24.322, 7, 0.0009999538736324511),
            (3.0, 1, 0.08326451666355042),
            (50.0, 3, 7.989179244951495e-11),
            (0.5, 9, 0.9999695662588389),
        ];
        for (x, k, p) in cases {
            assert_relative_eq!(chi2_sf(x, k), p, max_relative = 1e-9);
        }
        assert_eq!(chi2_sf(0.0, 7), 1.0);
        assert_relative_eq!(chi2_sf(24.321886347856854, 7), 0.001, max_relative = 1e-9);
    }

    #[test]
    fn normal_quantile_oracles() {
        let cases = [
            (0.975, 1.959963984540054),
            (0.995, 2.5758293035489004),
            (0.9, 1.2815515655446004),
            (1e-10, -6.361340902404056),
            (0.5, 0.0),
        ];
        for (p, z) in cases {
            assert!((normal_quantile(p).unwrap() - z).abs() < 1e-12 * z.abs().max(1.0));
        }
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn ks_basic_examples() {
        let s = [0.3, -1.0, 2.0, 2.0];
        let r = ks_two_sample(&s, &s, 0.01, prov()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
        assert!(r.pass);

        let zeros = vec![0.0; 1000];
        let signs: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(ks_statistic(&zeros, &signs).unwrap(), 0.5);
        assert!(ks_statistic(&[], &signs).is_err());
        assert!(ks_statistic(&[f64::NAN], &signs).is_err());
    }

    #[test]
    fn ks_handles_ties_across_samples() {
        assert_eq!(ks_statistic(&[1.0, 1.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn levy_distance_sees_small_shifts() {
        let a = [-1.0, 1.0];
        let b = [-0.995, 1.005];
        assert_eq!(ks_statistic(&a, &b).unwrap(), 0.5);
        assert!((levy_distance(&a, &b).unwrap() - 0.005).abs() < 1e-9);
        assert_eq!(levy_distance(&a, &a).unwrap(), 0.0);
        assert!((levy_distance(&[0.0], &[10.0]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chi2_hand_examples() {
        let mut equal = Vec::new();
        let mut one_bin = Vec::new();
        for k in 0..8 {
            let theta = -core::f64::consts::PI + (k as f64 + 0.5) * core::f64::consts::PI / 4.0;
            for _ in 0..10 {
                equal.push([math::cos(theta), math::sin(theta)]);
                one_bin.push([math::cos(0.1), math::sin(0.1)]);
            }
        }
        let r = chi2_sphere_uniformity(&equal, 8, 0.01, prov()).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        let r = chi2_sphere_uniformity(&one_bin, 8, 0.01, prov()).unwrap();
        assert_relative_eq!(r.statistic, 80.0 * 7.0);
        assert!(!r.pass);
        assert!(chi2_sphere_uniformity(&[[2.0, 0.0]; 40], 8, 0.01, prov()).is_err());
        assert!(chi2_sphere_uniformity(&equal[..39], 8, 0.01, prov()).is_err());
    }

    #[test]
    fn tightness_examples() {
        let r =
            tightness_diagnostic(&[0.0; 10], 0.5, 0.95, Rule::StatisticAtLeast, prov()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.pass);
        let r = tightness_diagnostic(&[0.0; 10], 0.5, 0.01, Rule::StatisticAtMost, prov()).unwrap();
        assert!(r.pass);
        assert!(tightness_diagnostic(&[0.0], 1.0, 0.5, Rule::StatisticAtMost, prov()).is_err());
    }

    #[test]
    fn mean_ci_examples() {
        assert_eq!(mean_with_ci(&[3.0; 5], 0.95).unwrap(), (3.0, 0.0));
        let signs: Vec<f64> = (0..10_000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let (m, hw) = mean_with_ci(&signs, 0.95).unwrap();
        assert_eq!(m, 0.0);
        assert!((hw - 0.0196).abs() < 1e-4);
        assert!(mean_with_ci(&[], 0.95).is_err());
        assert!(mean_with_ci(&[1.0], 0.95).is_err());
    }

    #[test]
    fn report_rules_and_serialization_fields() {
        let r = TestReport::new(
            "t",
            0.2,
            Some(0.005),
            0.01,
            Rule::PValueAbove,
            (1, 2),
            prov(),
        );
        assert!(!r.pass && r.is_consistent());
        let r = r.with_threshold(0.001);
        assert!(r.pass && r.is_consistent());
        assert!(!Rule::PValueAbove.holds(0.0, None, 0.0));
        assert!(!Rule::PValueAbove.holds(0.0, Some(f64::NAN), 0.0));
    }

    #[test]
    fn slope() {
        assert_relative_eq!(ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap(), 2.0);
        assert!(ols_slope(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
