use rand::Rng;
use rand_distr::{Distribution, Exp1, Geometric};
use serde::Serialize;

use super::{EquilibriumView, ZeroBias};
use crate::distributions::{AlParams, Base};
use crate::error::{domain, Error, Result};

/// Latent draws behind one coupled pair. Fields not used by a construction stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PairMeta {
    pub n: Option<u64>,
    pub s: Option<u64>,
    pub m: Option<u64>,
    pub i: Option<bool>,
    pub b: Option<f64>,
}

/// One joint draw (W, W^A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledPair {
    pub w: f64,
    pub w_a: f64,
    pub meta: PairMeta,
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn geometric<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    Geometric::new(p).expect("p checked at construction").sample(rng) + 1
}

fn beta_two_one<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (1.0 - rng.random::<f64>()).sqrt()
}

fn check_mean_zero(base: &Base, what: &str) -> Result<f64> {
    let s2 = base.variance();
    if !(s2 > 0.0 && s2.is_finite()) {
        return domain(format!("{what} needs a finite positive variance"));
    }
    if base.mean().abs() > 1e-12 * s2.sqrt() {
        return domain(format!("{what} needs mean zero (mean {})", base.mean()));
    }
    Ok(s2)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("geometric parameter {p} outside (0,1)"));
    }
    Ok(())
}

/// Direct draw of sqrt(p) * sum_{i<=N} (X_i + sqrt(p) a) with N ~ Geom(p) on {1, 2, ...}.
pub fn simulate_geometric<R: Rng + ?Sized>(p: f64, a: f64, x_base: &Base, rng: &mut R) -> f64 {
    let n = geometric(p, rng);
    p.sqrt() * x_base.sample_sum(n, rng) + p * a * n as f64
}

/// Geometric-sum coupling: the first N - 1 summands are shared and the last one is
/// replaced by its equilibrium version, drawn by the quantile coupling with Y_N.
#[derive(Debug, Clone)]
pub struct GeometricCoupler {
    p: f64,
    a: f64,
    x_base: Base,
    y_base: Base,
    view: EquilibriumView,
}

impl GeometricCoupler {
    pub fn new(p: f64, a: f64, x_base: &Base) -> Result<Self> {
        check_p(p)?;
        let s2 = check_mean_zero(x_base, "geometric coupling")?;
        if !(s2 > p * a * a) {
            return Err(Error::TransformUndefined { variance: s2, mean_sq: p * a * a });
        }
        let y_base = x_base.affine(1.0, p.sqrt() * a)?;
        let view = EquilibriumView::new(&y_base)?;
        Ok(GeometricCoupler { p, a, x_base: x_base.clone(), y_base, view })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn x_base(&self) -> &Base {
        &self.x_base
    }

    /// Law of Y = X + sqrt(p) a.
    pub fn y_base(&self) -> &Base {
        &self.y_base
    }

    pub fn view(&self) -> &EquilibriumView {
        &self.view
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledPair {
        let n = geometric(self.p, rng);
        let shared = self.y_base.sample_sum(n - 1, rng);
        let u = uniform_open(rng);
        let y = self.y_base.quantile(u).expect("u in (0,1)");
        let y_a = self.view.quantile(u).expect("u in (0,1)");
        let sp = self.p.sqrt();
        CoupledPair { w: sp * (shared + y), w_a: sp * (shared + y_a), meta: PairMeta { n: Some(n), ..Default::default() } }
    }

    /// Grid sup over u of |F_Y^{-1}(u) - F_{Y^A}^{-1}(u)|: 513 Chebyshev levels, levels
    /// approaching 0 and 1, and levels on both sides of every jump of F_Y.
    pub fn sup_inverse_distance(&self) -> f64 {
        let k = 513;
        let mut levels: Vec<f64> =
            (0..k).map(|i| 0.5 * (1.0 - (std::f64::consts::PI * (i as f64 + 0.5) / k as f64).cos())).collect();
        for j in 7..=12 {
            let e = 10f64.powi(-j);
            levels.push(e);
            levels.push(1.0 - e);
        }
        if let Some(atoms) = self.y_base.atoms() {
            if atoms.len() <= 10_000 {
                for (x, _) in atoms {
                    let c = self.y_base.cdf(x);
                    levels.push(c - 1e-12);
                    levels.push(c + 1e-12);
                }
            }
        }
        levels
            .into_iter()
            .filter(|u| *u > 0.0 && *u < 1.0)
            .map(|u| (self.y_base.quantile(u).expect("u in (0,1)") - self.view.quantile(u).expect("u in (0,1)")).abs())
            .fold(0.0, f64::max)
    }
}

/// Coupling for W = sum_{j<=N} Y_j, N = sum_{k<=S} T_k, S ~ Geom(q): the Y draws of the
/// first S - 1 blocks are shared and the last block is replaced by X^A, X = sum_{j<=T} Y_j.
#[derive(Debug, Clone)]
pub struct NestedCoupler {
    q: f64,
    t_base: Base,
    y_base: Base,
    x_law: Base,
    view: EquilibriumView,
}

impl NestedCoupler {
    pub fn new(q: f64, t_base: &Base, y_base: &Base) -> Result<Self> {
        check_p(q)?;
        let atoms = t_base
            .atoms()
            .ok_or_else(|| Error::Capability(format!("block size law {} must have finite support", t_base.label())))?;
        if atoms.iter().any(|(t, _)| *t < 0.0 || t.fract() != 0.0) {
            return domain("block sizes must be nonnegative integers");
        }
        let mut parts = Vec::with_capacity(atoms.len());
        for (t, w) in atoms {
            if w > 0.0 {
                parts.push((w, y_base.sum_of(t as u32)?));
            }
        }
        let x_law = if parts.len() == 1 { parts.pop().unwrap().1 } else { Base::mixture(parts)? };
        let view = EquilibriumView::new(&x_law)?;
        Ok(NestedCoupler { q, t_base: t_base.clone(), y_base: y_base.clone(), x_law, view })
    }

    /// Law of X = sum_{j<=T} Y_j.
    pub fn x_law(&self) -> &Base {
        &self.x_law
    }

    pub fn view(&self) -> &EquilibriumView {
        &self.view
    }

    fn block<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.t_base.sample(rng).round() as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledPair {
        let s = geometric(self.q, rng);
        let m: u64 = (1..s).map(|_| self.block(rng)).sum();
        let t_last = self.block(rng);
        let shared = self.y_base.sample_sum(m, rng);
        let w = shared + self.y_base.sample_sum(t_last, rng);
        let w_a = shared + self.view.sample(rng);
        CoupledPair { w, w_a, meta: PairMeta { n: Some(m + t_last), s: Some(s), m: Some(m), ..Default::default() } }
    }

    /// Direct draw of W.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = geometric(self.q, rng);
        let n: u64 = (0..s).map(|_| self.block(rng)).sum();
        self.y_base.sample_sum(n, rng)
    }
}

/// Mean-zero noise families with variance tau^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Normal,
    Uniform,
    TwoPoint,
}

impl Noise {
    pub fn parse(s: &str) -> Result<Noise> {
        match s {
            "normal" => Ok(Noise::Normal),
            "uniform" => Ok(Noise::Uniform),
            "two_point" | "rademacher" => Ok(Noise::TwoPoint),
            _ => domain(format!("unknown noise family `{s}`")),
        }
    }

    pub fn base(self, tau: f64) -> Result<Base> {
        if !(tau > 0.0 && tau.is_finite()) {
            return domain(format!("noise scale {tau} must be positive"));
        }
        match self {
            Noise::Normal => Base::normal(0.0, tau),
            Noise::Uniform => Base::uniform(-(3f64.sqrt()) * tau, 3f64.sqrt() * tau),
            Noise::TwoPoint => Base::two_point(-tau, tau, 0.5),
        }
    }
}

/// The mean-zero part xi of AL(0, a, b) = a E + xi with E ~ Exp(1) independent of xi.
/// Its density is f + a f' for the AL density f: a two-sided exponential with the AL rates.
#[derive(Debug, Clone, Copy)]
struct XiAl {
    rate_r: f64,
    rate_l: f64,
    mass_r: f64,
    zb_mass_r: f64,
}

impl XiAl {
    fn new(p: &AlParams) -> Self {
        let (lr, ll) = (p.rate_right(), p.rate_left());
        let mass_r = (1.0 - p.a * lr) * p.weight_right();
        let mass_l = 1.0 - mass_r;
        let zr = 2.0 * mass_r / (lr * lr);
        let zl = 2.0 * mass_l / (ll * ll);
        XiAl { rate_r: lr, rate_l: ll, mass_r, zb_mass_r: zr / (zr + zl) }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        if rng.random::<f64>() < self.mass_r {
            e / self.rate_r
        } else {
            -e / self.rate_l
        }
    }

    /// Zero-bias draw: on each side an equal mix of Exp and Gamma(2) with that side's rate.
    fn sample_zero_bias<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let right = rng.random::<f64>() < self.zb_mass_r;
        let mut m: f64 = Exp1.sample(rng);
        if rng.random::<bool>() {
            let e: f64 = Exp1.sample(rng);
            m += e;
        }
        if right {
            m / self.rate_r
        } else {
            -m / self.rate_l
        }
    }
}

/// Direct draw of W = Z' + eta with Z' ~ AL(0, a, b).
pub fn simulate_perturbed<R: Rng + ?Sized>(al: &AlParams, eta: &Base, rng: &mut R) -> f64 {
    al.sample(rng) + eta.sample(rng)
}

/// Coupling for W = Z' + eta. With V = xi + eta the mean-zero part of W, W^A = B V^z.
/// Z' is realised as B xi^z (the fixed point property), so on {I = 1} the pair differs
/// only by (1 - B) eta; on {I = 0}, W^A = B (xi + eta^z) with a fresh xi.
#[derive(Debug, Clone)]
pub struct PerturbedCoupler {
    al: AlParams,
    xi: XiAl,
    eta: Base,
    eta_zb: ZeroBias,
    p_i: f64,
}

impl PerturbedCoupler {
    pub fn new(a: f64, b: f64, eta: &Base) -> Result<Self> {
        let al = AlParams::new(0.0, a, b)?;
        let tau2 = check_mean_zero(eta, "perturbation noise").map_err(|e| Error::Capability(e.to_string()))?;
        let eta_zb = ZeroBias::new(eta).map_err(|e| Error::Capability(e.to_string()))?;
        Ok(PerturbedCoupler { al, xi: XiAl::new(&al), eta: eta.clone(), eta_zb, p_i: b * b / (b * b + tau2) })
    }

    pub fn al(&self) -> &AlParams {
        &self.al
    }

    pub fn eta(&self) -> &Base {
        &self.eta
    }

    /// P(I = 1) = b^2 / (b^2 + tau^2).
    pub fn p_i(&self) -> f64 {
        self.p_i
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledPair {
        let b = beta_two_one(rng);
        let z = b * self.xi.sample_zero_bias(rng);
        let eta = self.eta.sample(rng);
        let i = rng.random::<f64>() < self.p_i;
        let w_a = if i { z + b * eta } else { b * (self.xi.sample(rng) + self.eta_zb.sample(rng)) };
        CoupledPair { w: z + eta, w_a, meta: PairMeta { i: Some(i), b: Some(b), ..Default::default() } }
    }
}
