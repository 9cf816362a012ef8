//! Distances between an empirical sample and a reference law: exact Kolmogorov and
//! Wasserstein-1 estimators, and certified lower bounds for the smooth metrics d2, d12.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{AlParams, Base};
use crate::error::{domain, Result};

pub const DKW_DELTA: f64 = 0.01;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ks,
    W1,
    D2lb,
    D12lb,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<MetricKind> {
        match s {
            "ks" => Ok(MetricKind::Ks),
            "w1" => Ok(MetricKind::W1),
            "d2lb" => Ok(MetricKind::D2lb),
            "d12lb" => Ok(MetricKind::D12lb),
            _ => domain(format!("unknown metric `{s}` (expected ks, w1, d2lb or d12lb)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ks => "ks",
            MetricKind::W1 => "w1",
            MetricKind::D2lb => "d2lb",
            MetricKind::D12lb => "d12lb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Exact,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub kind: EstimateKind,
    pub confidence_radius: f64,
    pub n: usize,
}

/// Smooth test-function classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothClass {
    D2,
    D12,
}

/// A reference law for the cdf-based estimators.
pub trait Reference: Sync {
    fn cdf(&self, x: f64) -> f64;
    /// P(Z < x).
    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }
    /// Generalised inverse for u in (0, 1).
    fn quantile(&self, u: f64) -> f64;
    /// E[(x - Z)_+], the integral of the cdf up to x.
    fn integrated_cdf(&self, x: f64) -> f64;
    /// E[(Z - x)_+], the integral of the survival function from x.
    fn integrated_sf(&self, x: f64) -> f64;
}

impl Reference for AlParams {
    fn cdf(&self, x: f64) -> f64 {
        AlParams::cdf(self, x)
    }
    fn quantile(&self, u: f64) -> f64 {
        self.quantile_unchecked(u)
    }
    fn integrated_cdf(&self, x: f64) -> f64 {
        AlParams::integrated_cdf(self, x)
    }
    fn integrated_sf(&self, x: f64) -> f64 {
        AlParams::integrated_sf(self, x)
    }
}

impl Reference for Base {
    fn cdf(&self, x: f64) -> f64 {
        Base::cdf(self, x)
    }
    fn cdf_left(&self, x: f64) -> f64 {
        Base::cdf_left(self, x)
    }
    fn quantile(&self, u: f64) -> f64 {
        Base::quantile(self, u).expect("level in (0,1)")
    }
    fn integrated_cdf(&self, x: f64) -> f64 {
        (x * Base::cdf(self, x) - self.partial_moment(x)).max(0.0)
    }
    fn integrated_sf(&self, x: f64) -> f64 {
        ((self.mean() - self.partial_moment(x)) - x * (1.0 - Base::cdf(self, x))).max(0.0)
    }
}

/// Sorts in place with the total order on f64.
pub fn sort_samples(xs: &mut [f64]) {
    xs.sort_unstable_by(|a, b| a.total_cmp(b));
}

fn check_sorted(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return domain("empty sample");
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return domain("sample contains a non-finite value");
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return domain("sample must be sorted ascending");
    }
    Ok(())
}

/// sqrt(ln(2/delta) / (2n)) at delta = 0.01.
pub fn dkw_radius(n: usize) -> f64 {
    ((2.0 / DKW_DELTA).ln() / (2.0 * n as f64)).sqrt()
}

/// sup |F_n - F| over order statistics, for a continuous reference cdf.
pub fn empirical_kolmogorov<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<MetricEstimate> {
    check_sorted(sorted)?;
    let n = sorted.len() as f64;
    let d = sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - (i + 1) as f64 / n).abs()).max((f - i as f64 / n).abs())
    });
    Ok(MetricEstimate { value: d, kind: EstimateKind::Exact, confidence_radius: dkw_radius(sorted.len()), n: sorted.len() })
}

/// Kolmogorov distance that also inspects left limits, so atoms of the reference count.
pub fn kolmogorov(sorted: &[f64], r: &dyn Reference) -> Result<MetricEstimate> {
    check_sorted(sorted)?;
    let n = sorted.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < n {
        let x = sorted[i];
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == x {
            j += 1;
        }
        d = d.max((r.cdf(x) - (j + 1) as f64 / nf).abs()).max((r.cdf_left(x) - i as f64 / nf).abs());
        i = j + 1;
    }
    Ok(MetricEstimate { value: d, kind: EstimateKind::Exact, confidence_radius: dkw_radius(n), n })
}

/// Integral of |F_n - F|, exact given the reference's integrated cdf and survival function.
pub fn empirical_wasserstein(sorted: &[f64], r: &dyn Reference) -> Result<MetricEstimate> {
    check_sorted(sorted)?;
    let n = sorted.len();
    let mut total = r.integrated_cdf(sorted[0]) + r.integrated_sf(sorted[n - 1]);
    let mut g_lo = r.integrated_cdf(sorted[0]);
    for i in 1..n {
        let (x0, x1) = (sorted[i - 1], sorted[i]);
        if x1 == x0 {
            continue;
        }
        let g_hi = r.integrated_cdf(x1);
        let c = i as f64 / n as f64;
        let q = r.quantile(c).clamp(x0, x1);
        // |c - F| = (F - c) + 2 (c - F)_+ and F < c exactly on [x0, q).
        let mut piece = (g_hi - g_lo) - c * (x1 - x0);
        if q > x0 {
            piece += 2.0 * (c * (q - x0) - (r.integrated_cdf(q) - g_lo));
        }
        total += piece.max(0.0);
        g_lo = g_hi;
    }
    Ok(MetricEstimate { value: total, kind: EstimateKind::Exact, confidence_radius: 0.0, n })
}

/// Multinomial resample counts over n indices.
fn resample_counts<R: Rng + ?Sized>(counts: &mut [u32], rng: &mut R) {
    counts.iter_mut().for_each(|c| *c = 0);
    let n = counts.len();
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
}

/// Empirical `level` quantile of the deviations (nearest rank).
fn deviation_quantile(mut dev: Vec<f64>, level: f64) -> f64 {
    if dev.is_empty() {
        return 0.0;
    }
    dev.sort_unstable_by(|a, b| a.total_cmp(b));
    let k = ((level * dev.len() as f64).ceil() as usize).clamp(1, dev.len());
    dev[k - 1]
}

/// Wasserstein-1 with a bootstrap radius (`resamples` multinomial resamples).
pub fn wasserstein_with_bootstrap<R: Rng + ?Sized>(
    sorted: &[f64],
    r: &dyn Reference,
    resamples: usize,
    rng: &mut R,
) -> Result<MetricEstimate> {
    let mut est = empirical_wasserstein(sorted, r)?;
    let n = sorted.len();
    if resamples == 0 || n < 2 {
        return Ok(est);
    }
    // Per-gap data: F at both ends and the exact integral of F over the gap.
    let g: Vec<f64> = sorted.iter().map(|&x| r.integrated_cdf(x)).collect();
    let f: Vec<f64> = sorted.iter().map(|&x| r.cdf(x)).collect();
    let h: Vec<f64> = sorted.iter().map(|&x| r.integrated_sf(x)).collect();
    let gap = |i: usize, c: f64| -> f64 {
        let (x0, x1) = (sorted[i], sorted[i + 1]);
        let dx = x1 - x0;
        if dx <= 0.0 {
            return 0.0;
        }
        let int_f = g[i + 1] - g[i];
        let base = int_f - c * dx;
        let (f0, f1) = (f[i], f[i + 1]);
        let extra = if c <= f0 {
            0.0
        } else if c >= f1 {
            2.0 * (c * dx - int_f)
        } else {
            // Linear interpolation of F inside the crossing gap.
            (c - f0) * (c - f0) * dx / (f1 - f0)
        };
        (base + extra).max(0.0)
    };
    let mut counts = vec![0u32; n];
    let mut dev = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        resample_counts(&mut counts, rng);
        let first = counts.iter().position(|&c| c > 0).unwrap();
        let last = counts.iter().rposition(|&c| c > 0).unwrap();
        let mut total = g[first] + h[last];
        let mut cum = 0u64;
        for i in first..last {
            cum += counts[i] as u64;
            total += gap(i, cum as f64 / n as f64);
        }
        dev.push((total - est.value).abs());
    }
    est.confidence_radius = deviation_quantile(dev, BOOTSTRAP_LEVEL);
    Ok(est)
}

/// Test functions h(x) = -cos(omega x + phase) / omega^2 and the linear member h(x) = x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SmoothTest {
    Trig { omega: f64, phase: f64 },
    Linear,
}

/// Frequencies 2^j, j = -3..4.
pub const OMEGA_EXPONENTS: std::ops::RangeInclusive<i32> = -3..=4;

impl SmoothTest {
    pub fn h(&self, x: f64) -> f64 {
        match *self {
            SmoothTest::Trig { omega, phase } => -(omega * x + phase).cos() / (omega * omega),
            SmoothTest::Linear => x,
        }
    }

    /// E h(Z) from the characteristic function.
    pub fn expectation(&self, al: &AlParams) -> f64 {
        match *self {
            SmoothTest::Trig { omega, phase } => -(Complex64::from_polar(1.0, phase) * al.cf(omega)).re / (omega * omega),
            SmoothTest::Linear => al.mean(),
        }
    }
}

/// The test family for a smooth class; d12 keeps omega >= 1 so that |h'| <= 1.
pub fn smooth_family(class: SmoothClass) -> Vec<SmoothTest> {
    let mut fam = Vec::new();
    for j in OMEGA_EXPONENTS {
        if class == SmoothClass::D12 && j < 0 {
            continue;
        }
        let omega = 2f64.powi(j);
        fam.push(SmoothTest::Trig { omega, phase: 0.0 });
        fam.push(SmoothTest::Trig { omega, phase: std::f64::consts::FRAC_PI_2 });
    }
    fam.push(SmoothTest::Linear);
    fam
}

/// Per-member statistics of the smooth family.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FamilyMember {
    pub test: SmoothTest,
    pub empirical: f64,
    pub expected: f64,
    pub se: f64,
}

/// Values of every family member at x. The frequencies are powers of two, so all of them
/// follow from one sin/cos pair by angle doubling.
fn family_values(class: SmoothClass, x: f64, out: &mut Vec<f64>) {
    out.clear();
    let j0 = *OMEGA_EXPONENTS.start();
    let (mut s, mut c) = (x * 2f64.powi(j0)).sin_cos();
    for j in OMEGA_EXPONENTS {
        if j > j0 {
            let (s2, c2) = (2.0 * s * c, (c - s) * (c + s));
            s = s2;
            c = c2;
        }
        if class == SmoothClass::D12 && j < 0 {
            continue;
        }
        let w2 = 4f64.powi(j);
        out.push(-c / w2);
        out.push(s / w2);
    }
    out.push(x);
}

pub fn smooth_family_stats(samples: &[f64], al: &AlParams, class: SmoothClass) -> Result<Vec<FamilyMember>> {
    if samples.is_empty() {
        return domain("empty sample");
    }
    let fam = smooth_family(class);
    let k = fam.len();
    let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
    let mut row = Vec::with_capacity(k);
    let shift: Vec<f64> = fam.iter().map(|t| t.expectation(al)).collect();
    for &x in samples {
        if !x.is_finite() {
            return domain("sample contains a non-finite value");
        }
        family_values(class, x, &mut row);
        for j in 0..k {
            let d = row[j] - shift[j];
            sum[j] += d;
            sq[j] += d * d;
        }
    }
    let n = samples.len() as f64;
    Ok(fam
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let m = sum[j] / n;
            let var = if n > 1.0 { ((sq[j] - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
            FamilyMember { test: *t, empirical: m + shift[j], expected: shift[j], se: (var / n).sqrt() }
        })
        .collect())
}

/// max over the family of |mean h(samples) - E h(Z)|: a lower bound on d2 or d12.
pub fn smooth_lower_bound(samples: &[f64], al: &AlParams, class: SmoothClass) -> Result<MetricEstimate> {
    let stats = smooth_family_stats(samples, al, class)?;
    let v = stats.iter().map(|m| (m.empirical - m.expected).abs()).fold(0.0, f64::max);
    Ok(MetricEstimate { value: v, kind: EstimateKind::LowerBound, confidence_radius: 0.0, n: samples.len() })
}

/// Smooth lower bound with a simultaneous bootstrap radius over the whole family.
pub fn smooth_lower_bound_with_bootstrap<R: Rng + ?Sized>(
    samples: &[f64],
    al: &AlParams,
    class: SmoothClass,
    resamples: usize,
    rng: &mut R,
) -> Result<MetricEstimate> {
    let mut est = smooth_lower_bound(samples, al, class)?;
    let n = samples.len();
    if resamples == 0 || n < 2 {
        return Ok(est);
    }
    let k = smooth_family(class).len();
    let mut table = Vec::with_capacity(n * k);
    let mut row = Vec::with_capacity(k);
    let mut centre = vec![0.0f64; k];
    for &x in samples {
        family_values(class, x, &mut row);
        for j in 0..k {
            let v = row[j] as f32;
            table.push(v);
            centre[j] += v as f64;
        }
    }
    let mut counts = vec![0u32; n];
    let mut acc = vec![0.0f64; k];
    let mut dev = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        resample_counts(&mut counts, rng);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                let cf = c as f64;
                for (a, v) in acc.iter_mut().zip(&table[i * k..(i + 1) * k]) {
                    *a += cf * *v as f64;
                }
            }
        }
        let d = acc.iter().zip(&centre).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max) / n as f64;
        dev.push(d);
    }
    est.confidence_radius = deviation_quantile(dev, BOOTSTRAP_LEVEL);
    Ok(est)
}

/// One metric against an AL reference with its confidence radius.
pub fn estimate<R: Rng + ?Sized>(kind: MetricKind, sorted: &[f64], al: &AlParams, resamples: usize, rng: &mut R) -> Result<MetricEstimate> {
    match kind {
        MetricKind::Ks => kolmogorov(sorted, al),
        MetricKind::W1 => wasserstein_with_bootstrap(sorted, al, resamples, rng),
        MetricKind::D2lb => smooth_lower_bound_with_bootstrap(sorted, al, SmoothClass::D2, resamples, rng),
        MetricKind::D12lb => smooth_lower_bound_with_bootstrap(sorted, al, SmoothClass::D12, resamples, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn kolmogorov_small_cases() {
        let al = AlParams::new(0.0, 0.0, 1.0).unwrap();
        let d = empirical_kolmogorov(&[0.0], |x| al.cdf(x)).unwrap();
        assert!((d.value - 0.5).abs() < 1e-15);
        let xs = [al.quantile(0.25).unwrap(), al.quantile(0.75).unwrap()];
        assert!((empirical_kolmogorov(&xs, |x| al.cdf(x)).unwrap().value - 0.25).abs() < 1e-12);
        assert!((kolmogorov(&xs, &al).unwrap().value - 0.25).abs() < 1e-12);
        assert!(empirical_kolmogorov(&[], |x| x).is_err());
        assert!((dkw_radius(1_000_000) - 0.0016276).abs() < 1e-6);
    }

    #[test]
    fn wasserstein_small_cases() {
        let al = AlParams::new(0.0, 0.0, 1.0).unwrap();
        let w = empirical_wasserstein(&[0.0], &al).unwrap();
        assert!((w.value - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let tp = Base::two_point(-1.0, 2.0, 0.5).unwrap();
        assert!(empirical_wasserstein(&[-1.0, 2.0], &tp).unwrap().value.abs() < 1e-12);
        // Against a point mass the distance is the mean absolute deviation.
        let pt = Base::point(0.5);
        let xs = [-1.0, 0.0, 3.0];
        let want = (1.5 + 0.5 + 2.5) / 3.0;
        assert!((empirical_wasserstein(&xs, &pt).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_bootstrap_tracks_value() {
        let al = AlParams::new(0.0, 0.5, 1.0).unwrap();
        let mut rng = seeded(5);
        let mut xs: Vec<f64> = (0..20_000).map(|_| al.sample(&mut rng)).collect();
        sort_samples(&mut xs);
        let e = wasserstein_with_bootstrap(&xs, &al, 50, &mut rng).unwrap();
        assert!(e.confidence_radius > 0.0 && e.confidence_radius < 0.05);
        assert!(e.value < 0.05);
    }

    #[test]
    fn doubling_matches_direct() {
        let mut row = Vec::new();
        for &x in &[-7.3, -0.2, 0.0, 1.7, 40.0] {
            family_values(SmoothClass::D2, x, &mut row);
            let fam = smooth_family(SmoothClass::D2);
            assert_eq!(row.len(), fam.len());
            for (v, t) in row.iter().zip(&fam) {
                assert!((v - t.h(x)).abs() < 1e-12, "{x} {t:?}");
            }
        }
    }

    #[test]
    fn linear_member_gives_mean_shift() {
        let al = AlParams::new(0.0, 0.5, 1.0).unwrap();
        let xs = [0.1, 0.4, 2.0];
        let st = smooth_family_stats(&xs, &al, SmoothClass::D12).unwrap();
        let lin = st.iter().find(|m| m.test == SmoothTest::Linear).unwrap();
        assert!((lin.empirical - lin.expected - (2.5 / 3.0 - 0.5)).abs() < 1e-15);
    }
}
