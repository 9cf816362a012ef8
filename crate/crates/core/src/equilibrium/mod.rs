//! The asymmetric equilibrium transform W -> W^A, the zero-bias transform and
//! the exact couplings built on them.

mod coupling;
mod view;
mod zero_bias;

pub use coupling::{
    simulate_geometric, simulate_perturbed, CoupledPair, GeometricCoupler, NestedCoupler, Noise, PairMeta, PerturbedCoupler,
};
pub use view::{EquilibriumView, GRID_POINTS};
pub use zero_bias::{centered_equilibrium_sample, ZeroBias};

use num_complex::Complex64;
use serde::Serialize;

use crate::distributions::Base;
use crate::error::{domain, Error, Result};
use crate::quad;

/// Absolute tolerance of the v-integral inside the density.
pub const V_TOL: f64 = 1e-10;

/// (a, sigma^2) of the base after checking sigma^2 > a^2.
pub fn check_defined(base: &Base) -> Result<(f64, f64)> {
    let (a, s2) = (base.mean(), base.variance());
    // Relative margin: the exponential law has sigma^2 = a^2 up to rounding.
    if !(s2 - a * a > 1e-12 * s2.max(a * a)) {
        return Err(Error::TransformUndefined { variance: s2, mean_sq: a * a });
    }
    Ok((a, s2))
}

/// Breakpoints v = w / x in (0, 1) of the v-integrand, one per atom or kink x of the base.
fn v_breaks(base: &Base, w: f64) -> Vec<f64> {
    if w == 0.0 {
        return Vec::new();
    }
    let (lo, hi) = base.support();
    let sd = base.variance().sqrt();
    let pts = if w < 0.0 {
        let l = if lo.is_finite() { lo } else { w - 200.0 * sd - w.abs() };
        base.breakpoints_in(l, w)
    } else {
        let h = if hi.is_finite() { hi } else { w + 200.0 * sd + w.abs() };
        base.breakpoints_in(w, h)
    };
    pts.into_iter().map(|x| w / x).filter(|v| *v > 0.0 && *v < 1.0).collect()
}

/// Values of the density formula below this are taken as proof that no W^A law exists.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-8;

/// Density of W^A at w. Fails with [`Error::NoEquilibriumLaw`] where the formula is negative,
/// which happens for some bases with nonzero mean (a shifted Rademacher near its top atom).
pub fn equilibrium_density(base: &Base, w: f64) -> Result<f64> {
    let (a, s2) = check_defined(base)?;
    nonnegative(w, signed_density(base, a, s2, w)?)
}

/// The density formula without the sign check: the density of a signed measure of unit mass.
pub fn equilibrium_signed_density(base: &Base, w: f64) -> Result<f64> {
    let (a, s2) = check_defined(base)?;
    signed_density(base, a, s2, w)
}

pub(crate) fn nonnegative(w: f64, v: f64) -> Result<f64> {
    if v < -NEGATIVE_DENSITY_TOL {
        return Err(Error::NoEquilibriumLaw { w, value: v });
    }
    Ok(v.max(0.0))
}

pub(crate) fn signed_density(base: &Base, a: f64, s2: f64, w: f64) -> Result<f64> {
    let breaks = v_breaks(base, w);
    let c = 2.0 / (s2 - a * a);
    let v = if w <= 0.0 {
        let int = quad::integrate_pieces(|v| base.partial_moment(w / v), 0.0, 1.0, &breaks, V_TOL)?;
        c * (a * base.cdf(w) - int)
    } else {
        let int = quad::integrate_pieces(|v| a - base.partial_moment(w / v), 0.0, 1.0, &breaks, V_TOL)?;
        c * (int - a * (1.0 - base.cdf(w)))
    };
    Ok(v)
}

/// E[(W^A)^r].
pub fn equilibrium_moment(base: &Base, r: u32) -> Result<f64> {
    let (a, s2) = check_defined(base)?;
    let rf = r as f64;
    Ok((2.0 * base.raw_moment(r + 2) - 2.0 * a * (rf + 2.0) * base.raw_moment(r + 1)) / ((rf + 1.0) * (rf + 2.0) * (s2 - a * a)))
}

/// E|W^A|^r via signed absolute moments of the base.
pub fn equilibrium_abs_moment(base: &Base, r: u32) -> Result<f64> {
    let (a, s2) = check_defined(base)?;
    let rf = r as f64;
    Ok((2.0 * base.abs_moment(r + 2) - 2.0 * a * (rf + 2.0) * base.signed_abs_moment(r + 1)) / ((rf + 1.0) * (rf + 2.0) * (s2 - a * a)))
}

/// Right side of the moment bound for E|W^A|^k.
pub fn abs_moment_bound(base: &Base, k: u32) -> Result<f64> {
    let (a, s2) = check_defined(base)?;
    let kf = k as f64;
    Ok(2.0 * (1.0 + (kf + 2.0) * a.abs() / s2.sqrt()) * base.abs_moment(k + 2) / ((kf + 1.0) * (kf + 2.0) * (s2 - a * a)))
}

/// Switch-over below which the CF transform uses its Taylor expansion.
pub const CF_SERIES_CUTOFF: f64 = 1e-2;
const CF_SERIES_MOMENTS: u32 = 7;

/// 2(1 + (ait - 1) phi(t)) / (t^2 (sigma^2 - a^2)). Near t = 0 the Taylor expansion
/// built from the raw moments `raw[k] = E[W^k]` is used instead (all entries are used).
pub fn equilibrium_cf_with<F: Fn(f64) -> Complex64>(phi: F, a: f64, s2: f64, raw: &[f64], t: f64) -> Result<Complex64> {
    if !(s2 > a * a) {
        return Err(Error::TransformUndefined { variance: s2, mean_sq: a * a });
    }
    let d = s2 - a * a;
    if t.abs() < CF_SERIES_CUTOFF && raw.len() >= 3 {
        // E[(W^A)^j] / j! = 2 (m_{j+2} - (j+2) a m_{j+1}) / ((j+2)! d)
        let it = Complex64::new(0.0, t);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut pow = Complex64::new(1.0, 0.0);
        let mut fact = 2.0;
        for j in 0..raw.len() - 2 {
            sum += pow * (2.0 * (raw[j + 2] - (j + 2) as f64 * a * raw[j + 1]) / (fact * d));
            pow *= it;
            fact *= (j + 3) as f64;
        }
        return Ok(sum);
    }
    Ok(2.0 * (1.0 + Complex64::new(-1.0, a * t) * phi(t)) / (t * t * d))
}

/// CF of W^A for a built-in base.
pub fn equilibrium_cf(base: &Base, t: f64) -> Result<Complex64> {
    let (a, s2) = check_defined(base)?;
    let raw: Vec<f64> = (0..=CF_SERIES_MOMENTS).map(|k| base.raw_moment(k)).collect();
    equilibrium_cf_with(|u| base.cf(u), a, s2, &raw, t)
}

/// CF transform without moment data (the series branch is unavailable, so t must be nonzero).
pub fn equilibrium_cf_raw<F: Fn(f64) -> Complex64>(phi: F, a: f64, s2: f64, t: f64) -> Result<Complex64> {
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if !(s2 > a * a) {
        return Err(Error::TransformUndefined { variance: s2, mean_sq: a * a });
    }
    Ok(2.0 * (1.0 + Complex64::new(-1.0, a * t) * phi(t)) / (t * t * (s2 - a * a)))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleCheck {
    pub c: f64,
    pub max_abs_diff: f64,
    pub points: usize,
    pub ok: bool,
}

/// Compares the density of (cW)^A at w with |c|^{-1} times the density of W^A at w/c
/// (signed densities, so bases without a W^A law can be checked too).
pub fn equilibrium_scale_check(base: &Base, c: f64, tol: f64) -> Result<ScaleCheck> {
    if c == 0.0 {
        return domain("scale check needs c != 0");
    }
    check_defined(base)?;
    let scaled = base.affine(c, 0.0)?;
    let sd = base.variance().sqrt() + base.mean().abs();
    let (lo, hi) = base.support();
    let l = if lo.is_finite() { lo.min(0.0) } else { -6.0 * sd };
    let h = if hi.is_finite() { hi.max(0.0) } else { 6.0 * sd };
    let mut worst = 0.0f64;
    let n = 81;
    for i in 0..n {
        let x = l + (h - l) * (i as f64 + 0.37) / n as f64;
        let w = c * x;
        let lhs = equilibrium_signed_density(&scaled, w)?;
        let rhs = equilibrium_signed_density(base, x)? / c.abs();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(ScaleCheck { c, max_abs_diff: worst, points: n, ok: worst <= tol })
}
