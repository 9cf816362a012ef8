use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use super::al::AlParams;
use super::normal;
use crate::error::{domain, Error, Result};
use crate::quad;

/// The built-in base laws consumed by the equilibrium transform and the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Base {
    /// offset + step * Binomial(n, p), step > 0. Two-point laws are n = 1, point masses n = 0.
    Lattice { offset: f64, step: f64, n: u32, p: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Al(AlParams),
    Exponential { rate: f64 },
    /// Number of trials up to and including the first success, support {1, 2, ...}.
    Geometric { p: f64 },
    /// Beta(1, m).
    BetaOne { m: f64 },
    /// Beta(2, 1).
    BetaTwoOne,
    Mixture(Vec<(f64, Base)>),
}

fn near(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Eulerian polynomial A_k(q) = sum_j A(k, j) q^j.
fn eulerian_poly(k: u32, q: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut row = vec![1.0f64];
    for n in 2..=k as usize {
        let mut next = vec![0.0; n];
        for j in 0..n {
            let left = if j < row.len() { (j + 1) as f64 * row[j] } else { 0.0 };
            let right = if j >= 1 && j - 1 < row.len() { (n - j) as f64 * row[j - 1] } else { 0.0 };
            next[j] = left + right;
        }
        row = next;
    }
    row.iter().rev().fold(0.0, |acc, &c| acc * q + c)
}

impl Base {
    pub fn point(x: f64) -> Base {
        Base::Lattice { offset: x, step: 1.0, n: 0, p: 0.5 }
    }

    pub fn rademacher() -> Base {
        Base::Lattice { offset: -1.0, step: 2.0, n: 1, p: 0.5 }
    }

    /// Law putting mass `p_hi` on `hi` and the rest on `lo`.
    pub fn two_point(lo: f64, hi: f64, p_hi: f64) -> Result<Base> {
        if !(lo < hi) || !(p_hi > 0.0 && p_hi < 1.0) {
            return domain(format!("two_point needs lo < hi and 0 < p < 1 (got {lo}, {hi}, {p_hi})"));
        }
        Ok(Base::Lattice { offset: lo, step: hi - lo, n: 1, p: p_hi })
    }

    pub fn lattice(offset: f64, step: f64, n: u32, p: f64) -> Result<Base> {
        if !(step > 0.0) || !(p > 0.0 && p < 1.0) || !offset.is_finite() {
            return domain(format!("lattice needs step > 0 and 0 < p < 1 (got step={step}, p={p})"));
        }
        Ok(Base::Lattice { offset, step, n, p })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Base> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return domain(format!("uniform needs finite lo < hi (got {lo}, {hi})"));
        }
        Ok(Base::Uniform { lo, hi })
    }

    /// Uniform on (-sqrt 3, sqrt 3), variance 1.
    pub fn unit_uniform() -> Base {
        let s = 3f64.sqrt();
        Base::Uniform { lo: -s, hi: s }
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Base> {
        if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
            return domain(format!("normal needs sd > 0 (got {sd})"));
        }
        Ok(Base::Normal { mean, sd })
    }

    /// Symmetric Laplace with variance b^2, i.e. AL(0, 0, b).
    pub fn laplace(b: f64) -> Result<Base> {
        Ok(Base::Al(AlParams::new(0.0, 0.0, b)?))
    }

    pub fn al(p: AlParams) -> Base {
        Base::Al(p)
    }

    pub fn exponential(rate: f64) -> Result<Base> {
        if !(rate > 0.0) || !rate.is_finite() {
            return domain(format!("exponential needs rate > 0 (got {rate})"));
        }
        Ok(Base::Exponential { rate })
    }

    pub fn geometric(p: f64) -> Result<Base> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("geometric needs 0 < p < 1 (got {p})"));
        }
        Ok(Base::Geometric { p })
    }

    /// Beta(1, m); Beta(1, n - 1) has mean 1/n.
    pub fn beta_one(m: f64) -> Result<Base> {
        if !(m > 0.0) || !m.is_finite() {
            return domain(format!("Beta(1, m) needs m > 0 (got {m})"));
        }
        Ok(Base::BetaOne { m })
    }

    pub fn beta_two_one() -> Base {
        Base::BetaTwoOne
    }

    pub fn mixture(parts: Vec<(f64, Base)>) -> Result<Base> {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if parts.is_empty() || parts.iter().any(|p| !(p.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return domain("mixture weights must be nonnegative and sum to 1");
        }
        Ok(Base::Mixture(parts))
    }

    /// Parse `name[:p1,p2,...]`.
    pub fn parse(spec: &str) -> Result<Base> {
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (spec.trim(), ""),
        };
        let nums: Vec<f64> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Domain(format!("bad number `{s}` in base spec `{spec}`"))))
                .collect::<Result<_>>()?
        };
        let want = |k: usize| -> Result<()> {
            if nums.len() == k {
                Ok(())
            } else {
                domain(format!("base `{name}` takes {k} parameter(s), got {}", nums.len()))
            }
        };
        match name {
            "rademacher" => want(0).map(|_| Base::rademacher()),
            "shifted_rademacher" => {
                want(1)?;
                Base::two_point(nums[0] - 1.0, nums[0] + 1.0, 0.5)
            }
            "two_point" => {
                want(3)?;
                Base::two_point(nums[0], nums[1], nums[2])
            }
            "lattice" => {
                want(4)?;
                if nums[2] < 0.0 || nums[2].fract() != 0.0 {
                    return domain("lattice n must be a nonnegative integer");
                }
                Base::lattice(nums[0], nums[1], nums[2] as u32, nums[3])
            }
            "point" => {
                want(1)?;
                Ok(Base::point(nums[0]))
            }
            "uniform" => match nums.len() {
                0 => Ok(Base::unit_uniform()),
                2 => Base::uniform(nums[0], nums[1]),
                _ => domain("uniform takes 0 or 2 parameters"),
            },
            "normal" => match nums.len() {
                0 => Base::normal(0.0, 1.0),
                1 => Base::normal(0.0, nums[0]),
                2 => Base::normal(nums[0], nums[1]),
                _ => domain("normal takes 0, 1 or 2 parameters"),
            },
            "laplace" => match nums.len() {
                0 => Base::laplace(1.0),
                1 => Base::laplace(nums[0]),
                _ => domain("laplace takes 0 or 1 parameter"),
            },
            "al" => {
                want(3)?;
                Ok(Base::Al(AlParams::new(nums[0], nums[1], nums[2])?))
            }
            "exponential" => match nums.len() {
                0 => Base::exponential(1.0),
                1 => Base::exponential(nums[0]),
                _ => domain("exponential takes 0 or 1 parameter"),
            },
            "geometric" => {
                want(1)?;
                Base::geometric(nums[0])
            }
            "beta" => {
                want(2)?;
                match (nums[0], nums[1]) {
                    (x, m) if x == 1.0 => Base::beta_one(m),
                    (x, y) if x == 2.0 && y == 1.0 => Ok(Base::BetaTwoOne),
                    _ => domain("only Beta(1, m) and Beta(2, 1) are built in"),
                }
            }
            _ => domain(format!("unknown base `{name}`")),
        }
    }

    /// Canonical spec string, parseable by [`Base::parse`] for the named families.
    pub fn label(&self) -> String {
        match self {
            Base::Lattice { offset, step, n, p } => {
                if *n == 1 && *offset == -1.0 && *step == 2.0 && *p == 0.5 {
                    "rademacher".into()
                } else if *n == 1 {
                    format!("two_point:{},{},{}", offset, offset + step, p)
                } else if *n == 0 {
                    format!("point:{offset}")
                } else {
                    format!("lattice:{offset},{step},{n},{p}")
                }
            }
            Base::Uniform { lo, hi } => format!("uniform:{lo},{hi}"),
            Base::Normal { mean, sd } => format!("normal:{mean},{sd}"),
            Base::Al(q) => format!("al:{},{},{}", q.mu, q.a, q.b),
            Base::Exponential { rate } => format!("exponential:{rate}"),
            Base::Geometric { p } => format!("geometric:{p}"),
            Base::BetaOne { m } => format!("beta:1,{m}"),
            Base::BetaTwoOne => "beta:2,1".into(),
            Base::Mixture(parts) => {
                let inner: Vec<String> = parts.iter().map(|(w, b)| format!("{w}*{}", b.label())).collect();
                format!("mixture[{}]", inner.join(";"))
            }
        }
    }

    fn lattice_atoms(offset: f64, step: f64, n: u32, p: f64) -> impl Iterator<Item = (f64, f64)> {
        let nf = n as f64;
        let lg = libm::lgamma(nf + 1.0);
        let (lp, lq) = (p.ln(), (1.0 - p).ln());
        (0..=n).map(move |k| {
            let kf = k as f64;
            let w = if n == 0 { 1.0 } else { (lg - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0) + kf * lp + (nf - kf) * lq).exp() };
            (offset + step * kf, w)
        })
    }

    /// Atoms with their masses, for laws with finitely many atoms.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Base::Lattice { offset, step, n, p } => Some(Self::lattice_atoms(*offset, *step, *n, *p).collect()),
            Base::Mixture(parts) if parts.iter().all(|(_, b)| b.atoms().is_some()) => {
                let mut out = Vec::new();
                for (w, b) in parts {
                    for (x, m) in b.atoms().unwrap() {
                        out.push((x, w * m));
                    }
                }
                out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Some(out)
            }
            _ => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        match self {
            Base::Lattice { .. } | Base::Geometric { .. } => true,
            Base::Mixture(parts) => parts.iter().all(|(_, b)| b.is_discrete()),
            _ => false,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Base::Lattice { offset, step, n, p } => offset + step * *n as f64 * p,
            Base::Uniform { lo, hi } => 0.5 * (lo + hi),
            Base::Normal { mean, .. } => *mean,
            Base::Al(q) => q.mean(),
            Base::Exponential { rate } => 1.0 / rate,
            Base::Geometric { p } => 1.0 / p,
            Base::BetaOne { m } => 1.0 / (1.0 + m),
            Base::BetaTwoOne => 2.0 / 3.0,
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.mean()).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Base::Lattice { step, n, p, .. } => step * step * *n as f64 * p * (1.0 - p),
            Base::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Base::Normal { sd, .. } => sd * sd,
            Base::Al(q) => q.variance(),
            Base::Exponential { rate } => 1.0 / (rate * rate),
            Base::Geometric { p } => (1.0 - p) / (p * p),
            Base::BetaOne { m } => m / ((1.0 + m).powi(2) * (2.0 + m)),
            Base::BetaTwoOne => 1.0 / 18.0,
            Base::Mixture(parts) => {
                let m = self.mean();
                parts.iter().map(|(w, b)| w * (b.variance() + b.mean().powi(2))).sum::<f64>() - m * m
            }
        }
    }

    /// (inf, sup) of the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Base::Lattice { offset, step, n, .. } => (*offset, offset + step * *n as f64),
            Base::Uniform { lo, hi } => (*lo, *hi),
            Base::Normal { .. } | Base::Al(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Base::Exponential { .. } => (0.0, f64::INFINITY),
            Base::Geometric { .. } => (1.0, f64::INFINITY),
            Base::BetaOne { .. } | Base::BetaTwoOne => (0.0, 1.0),
            Base::Mixture(parts) => parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, (_, b)| {
                let (l, h) = b.support();
                (acc.0.min(l), acc.1.max(h))
            }),
        }
    }

    /// Atoms and kinks of the law inside [lo, hi] (capped at 100k points).
    pub fn breakpoints_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            Base::Lattice { offset, step, n, .. } => {
                let k0 = ((lo - offset) / step).ceil().max(0.0) as u64;
                let k1 = ((hi - offset) / step).floor().min(*n as f64);
                if k1 >= 0.0 {
                    for k in k0..=(k1 as u64).min(k0 + 100_000) {
                        out.push(offset + step * k as f64);
                    }
                }
            }
            Base::Uniform { lo: l, hi: h } => out.extend([*l, *h]),
            Base::Normal { .. } => {}
            Base::Al(q) => out.push(q.mu),
            Base::Exponential { .. } => out.push(0.0),
            Base::Geometric { .. } => {
                let k0 = lo.ceil().max(1.0) as u64;
                let k1 = hi.floor();
                if k1 >= 1.0 {
                    for k in k0..=(k1 as u64).min(k0 + 100_000) {
                        out.push(k as f64);
                    }
                }
            }
            Base::BetaOne { .. } | Base::BetaTwoOne => out.extend([0.0, 1.0]),
            Base::Mixture(parts) => {
                for (_, b) in parts {
                    out.extend(b.breakpoints_in(lo, hi));
                }
            }
        }
        out.retain(|&x| x >= lo && x <= hi);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Density for continuous laws, probability mass for discrete ones.
    pub fn density_or_mass(&self, x: f64) -> f64 {
        match self {
            Base::Lattice { .. } | Base::Geometric { .. } => self.mass(x),
            Base::Uniform { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Base::Normal { mean, sd } => normal::phi((x - mean) / sd) / sd,
            Base::Al(q) => q.pdf(x),
            Base::Exponential { rate } => {
                if x >= 0.0 {
                    rate * (-rate * x).exp()
                } else {
                    0.0
                }
            }
            Base::BetaOne { m } => {
                if (0.0..=1.0).contains(&x) {
                    m * (1.0 - x).powf(m - 1.0)
                } else {
                    0.0
                }
            }
            Base::BetaTwoOne => {
                if (0.0..=1.0).contains(&x) {
                    2.0 * x
                } else {
                    0.0
                }
            }
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.density_or_mass(x)).sum(),
        }
    }

    /// P(W = x).
    pub fn mass(&self, x: f64) -> f64 {
        match self {
            Base::Lattice { offset, step, n, p } => {
                let k = ((x - offset) / step).round();
                if k < 0.0 || k > *n as f64 || !near(x, offset + step * k) {
                    return 0.0;
                }
                let (nf, kf) = (*n as f64, k);
                if *n == 0 {
                    return 1.0;
                }
                (libm::lgamma(nf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0) + kf * p.ln() + (nf - kf) * (1.0 - p).ln()).exp()
            }
            Base::Geometric { p } => {
                let k = x.round();
                if k < 1.0 || !near(x, k) {
                    0.0
                } else {
                    p * (1.0 - p).powf(k - 1.0)
                }
            }
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.mass(x)).sum(),
            _ => 0.0,
        }
    }

    /// P(W <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Base::Lattice { offset, step, n, p } => {
                let kf = ((x - offset) / step + 1e-12).floor();
                if kf < 0.0 {
                    return 0.0;
                }
                if kf >= *n as f64 {
                    return 1.0;
                }
                Self::lattice_atoms(*offset, *step, *n, *p).take(kf as usize + 1).map(|a| a.1).sum::<f64>().min(1.0)
            }
            Base::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Base::Normal { mean, sd } => normal::cdf((x - mean) / sd),
            Base::Al(q) => q.cdf(x),
            Base::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Base::Geometric { p } => {
                let m = (x + 1e-12).floor();
                if m < 1.0 {
                    0.0
                } else {
                    -(m * (-p).ln_1p()).exp_m1()
                }
            }
            Base::BetaOne { m } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    -(m * (-x).ln_1p()).exp_m1()
                }
            }
            Base::BetaTwoOne => x.clamp(0.0, 1.0).powi(2),
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.cdf(x)).sum(),
        }
    }

    /// P(W < x).
    pub fn cdf_left(&self, x: f64) -> f64 {
        if self.is_discrete() || matches!(self, Base::Mixture(_)) {
            (self.cdf(x) - self.mass(x)).max(0.0)
        } else {
            self.cdf(x)
        }
    }

    /// Generalised inverse inf{x : F(x) >= u}.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level {u} outside (0,1)"));
        }
        Ok(match self {
            Base::Lattice { offset, step, n, p } => {
                let mut acc = 0.0;
                let mut last = *offset;
                for (x, w) in Self::lattice_atoms(*offset, *step, *n, *p) {
                    acc += w;
                    last = x;
                    if acc >= u * (1.0 - 1e-14) {
                        return Ok(x);
                    }
                }
                last
            }
            Base::Uniform { lo, hi } => lo + u * (hi - lo),
            Base::Normal { mean, sd } => mean + sd * normal::quantile(u),
            Base::Al(q) => q.quantile_unchecked(u),
            Base::Exponential { rate } => -(-u).ln_1p() / rate,
            Base::Geometric { p } => {
                let lq = (-p).ln_1p();
                let mut k = ((-u).ln_1p() / lq).ceil().max(1.0);
                while k > 1.0 && self.cdf(k - 1.0) >= u {
                    k -= 1.0;
                }
                while self.cdf(k) < u {
                    k += 1.0;
                }
                k
            }
            Base::BetaOne { m } => -((-u).ln_1p() / m).exp_m1(),
            Base::BetaTwoOne => u.sqrt(),
            Base::Mixture(parts) => self.mixture_quantile(parts, u)?,
        })
    }

    fn mixture_quantile(&self, parts: &[(f64, Base)], u: f64) -> Result<f64> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (w, b) in parts {
            if *w > 0.0 {
                let q = b.quantile(u)?;
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        if self.cdf(lo) >= u {
            return Ok(lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if let Some(atoms) = self.atoms() {
            if let Some(&(x, _)) = atoms.iter().find(|(x, _)| near(*x, hi)) {
                return Ok(x);
            }
        }
        Ok(hi)
    }

    /// E[W 1{W <= x}] (left-closed: atoms at x are included).
    pub fn partial_moment(&self, x: f64) -> f64 {
        self.partial(x, 1)
    }

    /// E[W^2 1{W <= x}].
    pub fn partial_second_moment(&self, x: f64) -> f64 {
        self.partial(x, 2)
    }

    fn partial(&self, x: f64, k: u32) -> f64 {
        let pw = |v: f64| if k == 1 { v } else { v * v };
        match self {
            Base::Lattice { offset, step, n, p } => {
                let kf = ((x - offset) / step + 1e-12).floor();
                if kf < 0.0 {
                    return 0.0;
                }
                Self::lattice_atoms(*offset, *step, *n, *p).take(kf.min(*n as f64) as usize + 1).map(|(v, w)| w * pw(v)).sum()
            }
            Base::Uniform { lo, hi } => {
                let t = x.clamp(*lo, *hi);
                let kk = (k + 1) as i32;
                (t.powi(kk) - lo.powi(kk)) / ((k + 1) as f64 * (hi - lo))
            }
            Base::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                let (cz, pz) = (normal::cdf(z), normal::phi(z));
                if k == 1 {
                    mean * cz - sd * pz
                } else {
                    mean * mean * cz - 2.0 * mean * sd * pz + sd * sd * (cz - z * pz)
                }
            }
            Base::Al(q) => {
                if k == 1 {
                    q.partial_moment(x)
                } else {
                    q.partial_second_moment(x)
                }
            }
            Base::Exponential { rate } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let l = *rate;
                let e = (-l * x).exp();
                if k == 1 {
                    1.0 / l - e * (x + 1.0 / l)
                } else {
                    2.0 / (l * l) - e * (x * x + 2.0 * x / l + 2.0 / (l * l))
                }
            }
            Base::Geometric { p } => {
                let m = (x + 1e-12).floor();
                if m < 1.0 {
                    return 0.0;
                }
                let qm = (m * (-p).ln_1p()).exp();
                if k == 1 {
                    1.0 / p - qm * (m + 1.0 / p)
                } else {
                    (2.0 - p) / (p * p) - qm * (m * m + 2.0 * m / p + (2.0 - p) / (p * p))
                }
            }
            Base::BetaOne { m } => {
                let t = x.clamp(0.0, 1.0);
                let s = 1.0 - t;
                let sm = s.powf(*m);
                let first = -t * sm + (1.0 - s * sm) / (m + 1.0);
                if k == 1 {
                    first
                } else {
                    let inner = 1.0 / (m + 1.0) - 1.0 / (m + 2.0) - s * sm / (m + 1.0) + s * s * sm / (m + 2.0);
                    -t * t * sm + 2.0 * inner
                }
            }
            Base::BetaTwoOne => {
                let t = x.clamp(0.0, 1.0);
                if k == 1 {
                    2.0 * t.powi(3) / 3.0
                } else {
                    t.powi(4) / 2.0
                }
            }
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.partial(x, k)).sum(),
        }
    }

    /// E[W^k].
    pub fn raw_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match self {
            Base::Lattice { offset, step, n, p } => Self::lattice_atoms(*offset, *step, *n, *p).map(|(x, w)| w * x.powi(k as i32)).sum(),
            Base::Uniform { lo, hi } => (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / ((k + 1) as f64 * (hi - lo)),
            Base::Normal { mean, sd } => {
                let (mut m0, mut m1) = (1.0, *mean);
                for j in 2..=k {
                    let m2 = mean * m1 + (j - 1) as f64 * sd * sd * m0;
                    m0 = m1;
                    m1 = m2;
                }
                m1
            }
            Base::Al(q) => q.raw_moment(k),
            Base::Exponential { rate } => factorial(k) / rate.powi(k as i32),
            Base::Geometric { p } => eulerian_poly(k, 1.0 - p) / p.powi(k as i32),
            Base::BetaOne { m } => (0..k).map(|j| (1.0 + j as f64) / (1.0 + m + j as f64)).product(),
            Base::BetaTwoOne => 2.0 / (k as f64 + 2.0),
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.raw_moment(k)).sum(),
        }
    }

    /// E[W^k 1{W > 0}].
    pub fn positive_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0 - self.cdf(0.0);
        }
        match self {
            Base::Lattice { offset, step, n, p } => {
                Self::lattice_atoms(*offset, *step, *n, *p).filter(|a| a.0 > 0.0).map(|(x, w)| w * x.powi(k as i32)).sum()
            }
            Base::Uniform { lo, hi } => {
                let (l, h) = (lo.max(0.0), hi.max(0.0));
                (h.powi(k as i32 + 1) - l.powi(k as i32 + 1)) / ((k + 1) as f64 * (hi - lo))
            }
            Base::Normal { mean, sd } => {
                let z = mean / sd;
                let j0 = normal::cdf(z);
                let j1 = mean * j0 + sd * normal::phi(z);
                if k == 1 {
                    return j1;
                }
                let (mut a, mut b) = (j0, j1);
                for j in 2..=k {
                    let c = mean * b + (j - 1) as f64 * sd * sd * a;
                    a = b;
                    b = c;
                }
                b
            }
            Base::Al(q) => q.positive_moment(k),
            Base::Mixture(parts) => parts.iter().map(|(w, b)| w * b.positive_moment(k)).sum(),
            _ => self.raw_moment(k),
        }
    }

    /// E|W|^k.
    pub fn abs_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let pos = self.positive_moment(k);
        let neg = self.raw_moment(k) - pos;
        if k % 2 == 0 {
            pos + neg
        } else {
            pos - neg
        }
    }

    /// E[|W|^k sgn(W)] with sgn(0) = 0.
    pub fn signed_abs_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return (1.0 - self.cdf(0.0)) - self.cdf_left(0.0);
        }
        let pos = self.positive_moment(k);
        let neg = self.raw_moment(k) - pos;
        if k % 2 == 0 {
            pos - neg
        } else {
            pos + neg
        }
    }

    pub fn cf(&self, t: f64) -> Complex64 {
        let i = Complex64::i();
        match self {
            Base::Lattice { offset, step, n, p } => {
                (i * t * offset).exp() * (Complex64::new(1.0 - p, 0.0) + p * (i * t * step).exp()).powu(*n)
            }
            Base::Uniform { lo, hi } => {
                let w = t * (hi - lo);
                if w.abs() < 1e-8 {
                    (i * t * 0.5 * (lo + hi)).exp() * (1.0 - w * w / 24.0)
                } else {
                    ((i * t * hi).exp() - (i * t * lo).exp()) / (i * w)
                }
            }
            Base::Normal { mean, sd } => (i * t * mean - 0.5 * sd * sd * t * t).exp(),
            Base::Al(q) => q.cf(t),
            Base::Exponential { rate } => *rate / (*rate - i * t),
            Base::Geometric { p } => {
                let e = (i * t).exp();
                *p * e / (1.0 - (1.0 - p) * e)
            }
            Base::BetaTwoOne => {
                if t.abs() < 1e-4 {
                    let z = i * t;
                    1.0 + 2.0 * z / 3.0 + z * z / 4.0 + z * z * z / 15.0
                } else {
                    2.0 * ((i * t).exp() * (1.0 / (i * t) + 1.0 / (t * t)) - 1.0 / (t * t))
                }
            }
            Base::BetaOne { .. } => {
                let re = quad::integrate(|x| (t * x).cos() * self.density_or_mass(x), 0.0, 1.0, 1e-13).unwrap_or(f64::NAN);
                let im = quad::integrate(|x| (t * x).sin() * self.density_or_mass(x), 0.0, 1.0, 1e-13).unwrap_or(f64::NAN);
                Complex64::new(re, im)
            }
            Base::Mixture(parts) => parts.iter().map(|(w, b)| *w * b.cf(t)).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Base::Lattice { offset, step, n, p } => match n {
                0 => *offset,
                1 => offset + if rng.random::<f64>() < *p { *step } else { 0.0 },
                _ => offset + step * Binomial::new(*n as u64, *p).expect("valid binomial").sample(rng) as f64,
            },
            Base::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Base::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Base::Al(q) => q.sample(rng),
            Base::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            Base::Geometric { p } => Geometric::new(*p).expect("valid geometric").sample(rng) as f64 + 1.0,
            Base::BetaOne { m } => {
                let u = 1.0 - rng.random::<f64>();
                -(u.ln() / m).exp_m1()
            }
            Base::BetaTwoOne => (1.0 - rng.random::<f64>()).sqrt(),
            Base::Mixture(parts) => {
                let mut u = rng.random::<f64>();
                for (w, b) in parts {
                    if u < *w {
                        return b.sample(rng);
                    }
                    u -= w;
                }
                parts.last().expect("nonempty mixture").1.sample(rng)
            }
        }
    }

    /// A draw of the sum of `n` independent copies.
    pub fn sample_sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        match self {
            Base::Lattice { offset, step, n: m, p } if n > 0 && *m > 0 => {
                let trials = n * *m as u64;
                let k = Binomial::new(trials, *p).expect("valid binomial").sample(rng);
                n as f64 * offset + step * k as f64
            }
            Base::Lattice { offset, .. } => n as f64 * offset,
            Base::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                n as f64 * mean + sd * (n as f64).sqrt() * z
            }
            _ => (0..n).map(|_| self.sample(rng)).sum(),
        }
    }

    /// The law of c W + m.
    pub fn affine(&self, c: f64, m: f64) -> Result<Base> {
        if c == 0.0 || !c.is_finite() || !m.is_finite() {
            return domain(format!("affine map needs finite nonzero scale (got c = {c})"));
        }
        Ok(match self {
            Base::Lattice { offset, step, n, p } => {
                if c > 0.0 {
                    Base::Lattice { offset: c * offset + m, step: c * step, n: *n, p: *p }
                } else {
                    let s = c * step;
                    Base::Lattice { offset: c * offset + m + s * *n as f64, step: -s, n: *n, p: 1.0 - p }
                }
            }
            Base::Uniform { lo, hi } => {
                let (a, b) = (c * lo + m, c * hi + m);
                Base::Uniform { lo: a.min(b), hi: a.max(b) }
            }
            Base::Normal { mean, sd } => Base::Normal { mean: c * mean + m, sd: c.abs() * sd },
            Base::Al(q) => Base::Al(AlParams::new(c * q.mu + m, c * q.a, c.abs() * q.b)?),
            Base::Mixture(parts) => Base::Mixture(parts.iter().map(|(w, b)| b.affine(c, m).map(|x| (*w, x))).collect::<Result<_>>()?),
            _ if c == 1.0 && m == 0.0 => self.clone(),
            _ => return Err(Error::Capability(format!("affine image of {} is not a built-in family", self.label()))),
        })
    }

    /// The law of the sum of `t` independent copies.
    pub fn sum_of(&self, t: u32) -> Result<Base> {
        if t == 0 {
            return Ok(Base::point(0.0));
        }
        if t == 1 {
            return Ok(self.clone());
        }
        match self {
            Base::Lattice { offset, step, n, p } => Ok(Base::Lattice { offset: t as f64 * offset, step: *step, n: n * t, p: *p }),
            Base::Normal { mean, sd } => Ok(Base::Normal { mean: t as f64 * mean, sd: sd * (t as f64).sqrt() }),
            _ => Err(Error::Capability(format!("{}-fold convolution of {} is not closed-form", t, self.label()))),
        }
    }
}

/// The catalogue of named built-in bases with the parameters used throughout the test suite.
pub fn builtin_bases() -> Vec<(&'static str, Base)> {
    let s3 = 3f64.sqrt();
    vec![
        ("rademacher", Base::rademacher()),
        ("two_point", Base::two_point(-0.5, 2.0, 0.2).unwrap()),
        ("shifted_rademacher", Base::two_point(-0.9, 1.1, 0.5).unwrap()),
        ("uniform", Base::unit_uniform()),
        ("shifted_uniform", Base::uniform(-s3 + 0.3, s3 + 0.3).unwrap()),
        ("normal", Base::normal(0.0, 1.0).unwrap()),
        ("shifted_normal", Base::normal(0.4, 1.0).unwrap()),
        ("laplace", Base::laplace(1.0).unwrap()),
        ("shifted_laplace", Base::al(AlParams::new(0.3, 0.0, 1.0).unwrap())),
        ("exponential", Base::exponential(1.0).unwrap()),
        ("geometric", Base::geometric(0.3).unwrap()),
        ("beta_1_n-1", Base::beta_one(9.0).unwrap()),
        ("beta_2_1", Base::beta_two_one()),
    ]
}
