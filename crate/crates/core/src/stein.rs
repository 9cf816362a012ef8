//! The AL Stein operator, the explicit solution of the Stein equation and
//! grid checks of its sup-norm constants.

use serde::Serialize;

use crate::distributions::AlParams;
use crate::error::{domain, Error, Result};
use crate::quad;

/// Quadrature tolerance for the two exponential-weight integrals.
pub const QUAD_TOL: f64 = 1e-10;
/// Truncation point: the weight e^{-lambda s} drops below this.
pub const WEIGHT_CUTOFF: f64 = 1e-16;

/// A function fed to the Stein operator. Missing derivatives fall back to central differences.
pub trait SteinFn: Sync {
    fn f(&self, x: f64) -> f64;
    fn df(&self, _x: f64) -> Option<f64> {
        None
    }
    fn d2f(&self, _x: f64) -> Option<f64> {
        None
    }
}

/// Closure-backed [`SteinFn`] with optional analytic derivatives.
pub struct FnTriple<F, G = fn(f64) -> f64, H = fn(f64) -> f64> {
    pub f: F,
    pub df: Option<G>,
    pub d2f: Option<H>,
}

impl<F: Fn(f64) -> f64 + Sync> FnTriple<F> {
    pub fn numeric(f: F) -> Self {
        FnTriple { f, df: None, d2f: None }
    }
}

impl<F, G, H> SteinFn for FnTriple<F, G, H>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
    H: Fn(f64) -> f64 + Sync,
{
    fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn df(&self, x: f64) -> Option<f64> {
        self.df.as_ref().map(|g| g(x))
    }
    fn d2f(&self, x: f64) -> Option<f64> {
        self.d2f.as_ref().map(|g| g(x))
    }
}

pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// (b^2/2) f''(x) + a f'(x) - (f(x) - f(0)) for AL(0, a, b).
pub fn stein_apply(p: &AlParams, f: &dyn SteinFn, x: f64) -> Result<f64> {
    let h = fd_step(x);
    let fx = f.f(x);
    let d1 = f.df(x).unwrap_or_else(|| (f.f(x + h) - f.f(x - h)) / (2.0 * h));
    let d2 = f.d2f(x).unwrap_or_else(|| (f.f(x + h) - 2.0 * fx + f.f(x - h)) / (h * h));
    let v = 0.5 * p.b * p.b * d2 + p.a * d1 - (fx - f.f(0.0));
    if !v.is_finite() {
        return Err(Error::Numeric { x, reason: "non-finite operator value".into() });
    }
    Ok(v)
}

/// max over the family of |mean of the operator over the samples|, with the
/// largest standard error among the family members.
pub fn stein_discrepancy(samples: &[f64], p: &AlParams, family: &[&dyn SteinFn]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return domain("stein discrepancy of an empty sample");
    }
    let n = samples.len() as f64;
    let mut worst = 0.0f64;
    let mut worst_se = 0.0f64;
    for f in family {
        let (mut s, mut s2) = (0.0, 0.0);
        for &x in samples {
            let v = stein_apply(p, *f, x)?;
            s += v;
            s2 += v * v;
        }
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        worst = worst.max(mean.abs());
        worst_se = worst_se.max((var / n).sqrt());
    }
    Ok((worst, worst_se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HClass {
    Bounded,
    Lipschitz,
}

/// Test functions h for the Stein equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFn {
    Indicator { z: f64 },
    Sin { omega: f64 },
    Gauss,
    Linear,
    Const(f64),
    AbsShift { z: f64 },
    Cos { omega: f64, phase: f64 },
}

impl TestFn {
    /// `indicator:z`, `sin`, `gauss`, `linear`, `const:c`, `abs:z`.
    pub fn parse(s: &str) -> Result<TestFn> {
        let (name, rest) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |r: Option<&str>| -> Result<f64> {
            r.ok_or_else(|| Error::Domain(format!("test function `{name}` needs a parameter")))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad parameter in `{s}`")))
        };
        match name.trim() {
            "indicator" => Ok(TestFn::Indicator { z: num(rest)? }),
            "sin" => Ok(TestFn::Sin { omega: rest.map_or(Ok(1.0), |r| num(Some(r)))? }),
            "gauss" => Ok(TestFn::Gauss),
            "linear" => Ok(TestFn::Linear),
            "const" => Ok(TestFn::Const(num(rest)?)),
            "abs" => Ok(TestFn::AbsShift { z: num(rest)? }),
            _ => domain(format!("unknown test function `{s}`")),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TestFn::Indicator { z } => format!("indicator:{z}"),
            TestFn::Sin { omega } => format!("sin:{omega}"),
            TestFn::Gauss => "gauss".into(),
            TestFn::Linear => "linear".into(),
            TestFn::Const(c) => format!("const:{c}"),
            TestFn::AbsShift { z } => format!("abs:{z}"),
            TestFn::Cos { omega, phase } => format!("cos:{omega},{phase}"),
        }
    }

    pub fn h(&self, x: f64) -> f64 {
        match *self {
            TestFn::Indicator { z } => {
                if x <= z {
                    1.0
                } else {
                    0.0
                }
            }
            TestFn::Sin { omega } => (omega * x).sin(),
            TestFn::Gauss => (-x * x).exp(),
            TestFn::Linear => x,
            TestFn::Const(c) => c,
            TestFn::AbsShift { z } => (x - z).abs(),
            TestFn::Cos { omega, phase } => (omega * x + phase).cos(),
        }
    }

    /// h'(x) where it exists.
    pub fn dh(&self, x: f64) -> Option<f64> {
        match *self {
            TestFn::Indicator { .. } => None,
            TestFn::Sin { omega } => Some(omega * (omega * x).cos()),
            TestFn::Gauss => Some(-2.0 * x * (-x * x).exp()),
            TestFn::Linear => Some(1.0),
            TestFn::Const(_) => Some(0.0),
            TestFn::AbsShift { z } => Some(if x >= z { 1.0 } else { -1.0 }),
            TestFn::Cos { omega, phase } => Some(-omega * (omega * x + phase).sin()),
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            TestFn::Indicator { z } | TestFn::AbsShift { z } => vec![z],
            _ => Vec::new(),
        }
    }

    pub fn class(&self) -> HClass {
        match self {
            TestFn::Indicator { .. } | TestFn::Const(_) => HClass::Bounded,
            _ => HClass::Lipschitz,
        }
    }

    /// (inf h, sup h), infinite when h is unbounded.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            TestFn::Indicator { .. } => (0.0, 1.0),
            TestFn::Sin { .. } | TestFn::Cos { .. } => (-1.0, 1.0),
            TestFn::Gauss => (0.0, 1.0),
            TestFn::Const(c) => (c, c),
            TestFn::Linear => (f64::NEG_INFINITY, f64::INFINITY),
            TestFn::AbsShift { .. } => (0.0, f64::INFINITY),
        }
    }

    /// ||h'|| (infinite for discontinuous h).
    pub fn lipschitz_norm(&self) -> f64 {
        match *self {
            TestFn::Indicator { .. } => f64::INFINITY,
            TestFn::Sin { omega } | TestFn::Cos { omega, .. } => omega.abs(),
            TestFn::Gauss => (2.0 / std::f64::consts::E).sqrt(),
            TestFn::Linear | TestFn::AbsShift { .. } => 1.0,
            TestFn::Const(_) => 0.0,
        }
    }
}

/// f_h for one (params, h) pair with E h(Z) precomputed.
#[derive(Debug, Clone)]
pub struct SteinSolution {
    pub params: AlParams,
    pub h: TestFn,
    pub mean_h: f64,
    lr: f64,
    ll: f64,
    norm: f64,
    tol: f64,
}

impl SteinSolution {
    /// Requires mu = 0 (the Stein equation is stated for AL(0, a, b)).
    pub fn new(params: AlParams, h: TestFn) -> Result<Self> {
        Self::with_tol(params, h, QUAD_TOL)
    }

    pub fn with_tol(params: AlParams, h: TestFn, tol: f64) -> Result<Self> {
        if params.mu != 0.0 {
            return domain("the Stein solution is defined for mu = 0");
        }
        let mut s = SteinSolution {
            params,
            h,
            mean_h: 0.0,
            lr: params.rate_right(),
            ll: params.rate_left(),
            norm: 1.0 / (2.0 * params.b * params.b + params.a * params.a).sqrt(),
            tol,
        };
        // Same integrals as f_h(0), so the initial condition holds to rounding.
        let (r, l) = (s.raw_right(0.0)?, s.raw_left(0.0)?);
        s.mean_h = s.norm * (r + l);
        Ok(s)
    }

    /// int_x^inf e^{-lr (t-x)} h(t) dt, truncated where the weight is below the cutoff.
    fn raw_right(&self, x: f64) -> Result<f64> {
        let len = -WEIGHT_CUTOFF.ln() / self.lr;
        let h = self.h;
        quad::integrate_pieces(|t| (-self.lr * (t - x)).exp() * h.h(t), x, x + len, &h.breakpoints(), 0.01 * self.tol)
            .map_err(|e| annotate(e, x))
    }

    /// int_{-inf}^x e^{-ll (x-t)} h(t) dt.
    fn raw_left(&self, x: f64) -> Result<f64> {
        let len = -WEIGHT_CUTOFF.ln() / self.ll;
        let h = self.h;
        quad::integrate_pieces(|t| (-self.ll * (x - t)).exp() * h.h(t), x - len, x, &h.breakpoints(), 0.01 * self.tol)
            .map_err(|e| annotate(e, x))
    }

    fn centered(&self, x: f64) -> Result<(f64, f64)> {
        let i1 = self.raw_right(x)? - self.mean_h / self.lr;
        let i2 = self.raw_left(x)? - self.mean_h / self.ll;
        Ok((i1, i2))
    }

    pub fn h_tilde(&self, x: f64) -> f64 {
        self.h.h(x) - self.mean_h
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        let (i1, i2) = self.centered(x)?;
        Ok(-self.norm * (i1 + i2))
    }

    pub fn df(&self, x: f64) -> Result<f64> {
        let (i1, i2) = self.centered(x)?;
        Ok(-self.norm * (self.lr * i1 - self.ll * i2))
    }

    /// (f, f', f'') at x; f'' from the equation itself.
    pub fn derivatives(&self, x: f64) -> Result<(f64, f64, f64)> {
        let (i1, i2) = self.centered(x)?;
        let f = -self.norm * (i1 + i2);
        let d1 = -self.norm * (self.lr * i1 - self.ll * i2);
        let (al, be) = (self.params.alpha(), self.params.beta());
        let d2 = (al * al - be * be) * (self.h_tilde(x) + f) - 2.0 * be * d1;
        Ok((f, d1, d2))
    }

    pub fn d2f(&self, x: f64) -> Result<f64> {
        Ok(self.derivatives(x)?.2)
    }

    /// f''' for differentiable h.
    pub fn d3f(&self, x: f64) -> Result<f64> {
        let dh = self.h.dh(x).ok_or_else(|| Error::Capability(format!("{} has no derivative", self.h.name())))?;
        let (_, d1, d2) = self.derivatives(x)?;
        let (al, be) = (self.params.alpha(), self.params.beta());
        Ok((al * al - be * be) * (dh + d1) - 2.0 * be * d2)
    }

    /// (b^2/2) f'' + a f' - f - h~ with every term supplied by the caller.
    pub fn residual(&self, x: f64, f: f64, d1: f64, d2: f64) -> f64 {
        let p = &self.params;
        0.5 * p.b * p.b * d2 + p.a * d1 - f - self.h_tilde(x)
    }
}

fn annotate(e: Error, x: f64) -> Error {
    match e {
        Error::Numeric { reason, .. } => Error::Numeric { x, reason },
        other => other,
    }
}

/// The sup-norm grid: 2001 points on [-20/(alpha-|beta|), 20/(alpha+|beta|)] plus the
/// one-sided neighbours of every breakpoint.
pub fn regularity_grid(p: &AlParams, extra: &[f64]) -> Vec<f64> {
    let (al, be) = (p.alpha(), p.beta().abs());
    let (lo, hi) = (-20.0 / (al - be), 20.0 / (al + be));
    let mut g: Vec<f64> = (0..2001).map(|i| lo + (hi - lo) * i as f64 / 2000.0).collect();
    for &z in extra {
        let d = 1e-9 * z.abs().max(1.0);
        g.extend([z - d, z, z + d]);
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityRow {
    pub h: String,
    pub class: HClass,
    /// ||h~|| for bounded h, ||h'|| for Lipschitz h.
    pub scale: f64,
    /// Grid sups of the three checked derivatives (orders 0..2 or 1..3).
    pub sups: [f64; 3],
    /// The constants 1, 2/sqrt(2b^2+a^2), 4/b^2 multiplied by `scale`.
    pub limits: [f64; 3],
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub params: AlParams,
    pub rows: Vec<RegularityRow>,
    pub slack: f64,
}

impl RegularityReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }
}

/// Grid sups of |f_h|, |f_h'|, |f_h''| (bounded h) or |f_h'|, |f_h''|, |f_h'''| (Lipschitz h)
/// against the Stein-solution constants, with additive slack `slack`.
pub fn verify_regularity(p: &AlParams, family: &[TestFn], slack: f64) -> Result<RegularityReport> {
    let consts = [1.0, 2.0 / (2.0 * p.b * p.b + p.a * p.a).sqrt(), 4.0 / (p.b * p.b)];
    let mut rows = Vec::with_capacity(family.len());
    for h in family {
        let sol = SteinSolution::new(*p, *h)?;
        let grid = regularity_grid(p, &h.breakpoints());
        let mut sups = [0.0f64; 3];
        let scale = match h.class() {
            HClass::Bounded => {
                let (lo, hi) = h.range();
                (hi - sol.mean_h).max(sol.mean_h - lo)
            }
            HClass::Lipschitz => h.lipschitz_norm(),
        };
        for &x in &grid {
            let (f, d1, d2) = sol.derivatives(x)?;
            let vals = match h.class() {
                HClass::Bounded => [f, d1, d2],
                HClass::Lipschitz => [d1, d2, sol.d3f(x)?],
            };
            for (s, v) in sups.iter_mut().zip(vals) {
                *s = s.max(v.abs());
            }
        }
        let limits = [consts[0] * scale, consts[1] * scale, consts[2] * scale];
        let ok = sups.iter().zip(&limits).all(|(s, l)| *s <= l + slack);
        rows.push(RegularityRow { h: h.name(), class: h.class(), scale, sups, limits, ok });
    }
    Ok(RegularityReport { params: *p, rows, slack })
}

/// Indicator family 1{. <= z} on a grid of z spanning the bulk of AL(0, a, b).
pub fn indicator_family(p: &AlParams, count: usize) -> Vec<TestFn> {
    let lo = p.quantile_unchecked(0.02);
    let hi = p.quantile_unchecked(0.98);
    (0..count).map(|i| TestFn::Indicator { z: lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64 }).collect()
}

/// Lipschitz family with ||h'|| <= 1.
pub fn lipschitz_family() -> Vec<TestFn> {
    vec![
        TestFn::Linear,
        TestFn::Sin { omega: 1.0 },
        TestFn::Sin { omega: 0.5 },
        TestFn::AbsShift { z: 0.0 },
        TestFn::AbsShift { z: 1.0 },
        TestFn::Cos { omega: 1.0, phase: 0.3 },
    ]
}

/// Five smooth functions with analytic first and second derivatives, used to probe
/// the characterisation by Monte Carlo.
pub fn operator_family() -> Vec<FnTriple<fn(f64) -> f64>> {
    fn t(f: fn(f64) -> f64, d1: fn(f64) -> f64, d2: fn(f64) -> f64) -> FnTriple<fn(f64) -> f64> {
        FnTriple { f, df: Some(d1), d2f: Some(d2) }
    }
    vec![
        t(f64::sin, f64::cos, |x| -x.sin()),
        t(|x| (0.5 * x).cos(), |x| -0.5 * (0.5 * x).sin(), |x| -0.25 * (0.5 * x).cos()),
        t(|x| (-x * x).exp(), |x| -2.0 * x * (-x * x).exp(), |x| (4.0 * x * x - 2.0) * (-x * x).exp()),
        t(f64::atan, |x| 1.0 / (1.0 + x * x), |x| -2.0 * x / (1.0 + x * x).powi(2)),
        t(|x| x / (1.0 + x * x).sqrt(), |x| (1.0 + x * x).powf(-1.5), |x| -3.0 * x * (1.0 + x * x).powf(-2.5)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_on_polynomials() {
        let p = AlParams::new(0.0, 0.7, 1.3).unwrap();
        let lin = FnTriple { f: |x: f64| x, df: Some(|_| 1.0), d2f: Some(|_| 0.0) };
        assert!((stein_apply(&p, &lin, 2.0).unwrap() - (0.7 - 2.0)).abs() < 1e-15);
        let q = AlParams::new(0.0, 1.0, 1.0).unwrap();
        let sq = FnTriple::numeric(|x: f64| x * x);
        assert!((stein_apply(&q, &sq, 0.0).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn linear_h_gives_minus_x() {
        for &(a, b) in &[(0.0, 1.0), (0.5, 1.0), (-1.2, 0.7)] {
            let p = AlParams::new(0.0, a, b).unwrap();
            let s = SteinSolution::new(p, TestFn::Linear).unwrap();
            assert!((s.mean_h - a).abs() < 1e-9);
            for &x in &[-1.0, 0.0, 3.0] {
                assert!((s.f(x).unwrap() + x).abs() < 1e-8, "a={a} x={x}");
                assert!((s.df(x).unwrap() + 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_h_vanishes() {
        let p = AlParams::new(0.0, 0.5, 1.0).unwrap();
        let s = SteinSolution::new(p, TestFn::Const(1.0)).unwrap();
        for &x in &[-4.0, 0.3, 5.0] {
            assert!(s.f(x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_mean_is_cdf() {
        let p = AlParams::new(0.0, 0.5, 1.0).unwrap();
        let s = SteinSolution::new(p, TestFn::Indicator { z: 0.5 }).unwrap();
        assert!((s.mean_h - p.cdf(0.5)).abs() < 1e-11);
        assert!(s.f(0.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn parse_names() {
        assert_eq!(TestFn::parse("indicator:0.5").unwrap(), TestFn::Indicator { z: 0.5 });
        assert_eq!(TestFn::parse("sin").unwrap(), TestFn::Sin { omega: 1.0 });
        assert!(TestFn::parse("cosh").is_err());
    }
}
