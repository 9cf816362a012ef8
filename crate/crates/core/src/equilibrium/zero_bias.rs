use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::distributions::Base;
use crate::error::{domain, Result};

/// Zero-bias law W^z of a mean-zero base: density E[W 1{W > w}] / sigma^2.
#[derive(Debug, Clone)]
pub struct ZeroBias {
    base: Base,
    s2: f64,
}

impl ZeroBias {
    pub fn new(base: &Base) -> Result<Self> {
        let (m, s2) = (base.mean(), base.variance());
        if !(s2 > 0.0) || !s2.is_finite() {
            return domain("zero bias needs a finite positive variance");
        }
        if m.abs() > 1e-12 * s2.sqrt() {
            return domain(format!("zero bias needs a mean-zero base (mean {m})"));
        }
        Ok(ZeroBias { base: base.clone(), s2 })
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    pub fn density(&self, w: f64) -> f64 {
        (-self.base.partial_moment(w) / self.s2).max(0.0)
    }

    /// P(W^z <= w) = E[W min(W, w)] / sigma^2.
    pub fn cdf(&self, w: f64) -> f64 {
        ((self.base.partial_second_moment(w) - w * self.base.partial_moment(w)) / self.s2).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level {u} outside (0,1)"));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let (l, h) = self.base.support();
        let sd = self.s2.sqrt();
        let mut lo = if l.is_finite() { l } else { -sd };
        let mut hi = if h.is_finite() { h } else { sd };
        while self.cdf(lo) > u {
            lo -= 2.0 * (hi - lo);
        }
        while self.cdf(hi) < u {
            hi += 2.0 * (hi - lo);
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.cdf(x) - u;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= 1e-13 * x.abs().max(1.0) {
                break;
            }
            let d = self.density(x);
            let step = if d > 0.0 { x - g / d } else { f64::NAN };
            x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.base {
            Base::Normal { sd, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            Base::Lattice { offset, step, n: 1, .. } => offset + step * rng.random::<f64>(),
            Base::Al(q) if q.a == 0.0 => {
                // Symmetric Laplace: half Exp(lambda), half Gamma(2, lambda), random sign.
                let lam = 2f64.sqrt() / q.b;
                let e1: f64 = Exp1.sample(rng);
                let mut m = e1;
                if rng.random::<bool>() {
                    let e2: f64 = Exp1.sample(rng);
                    m += e2;
                }
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                q.mu + s * m / lam
            }
            _ => loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    return self.quantile_unchecked(u);
                }
            },
        }
    }
}

/// B * W^z with B ~ Beta(2, 1): the centered equilibrium law of a mean-zero W.
pub fn centered_equilibrium_sample<R: Rng + ?Sized>(zb: &ZeroBias, rng: &mut R) -> f64 {
    let b = (1.0 - rng.random::<f64>()).sqrt();
    b * zb.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn fixed_point_and_examples() {
        let n = ZeroBias::new(&Base::normal(0.0, 1.3).unwrap()).unwrap();
        let base = Base::normal(0.0, 1.3).unwrap();
        for &w in &[-3.0, -0.4, 0.0, 1.1, 2.5] {
            assert!((n.density(w) - base.density_or_mass(w)).abs() < 1e-10);
            assert!((n.cdf(w) - base.cdf(w)).abs() < 1e-12);
        }
        let l = ZeroBias::new(&Base::laplace(1.0).unwrap()).unwrap();
        assert!((l.density(0.0) - 2f64.sqrt() / 4.0).abs() < 1e-15);
        let r = ZeroBias::new(&Base::rademacher()).unwrap();
        assert!((r.density(0.3) - 0.5).abs() < 1e-15);
        assert!((r.cdf(0.3) - 0.65).abs() < 1e-15);
        assert!(ZeroBias::new(&Base::exponential(1.0).unwrap()).is_err());
    }

    #[test]
    fn laplace_sampler_matches_cdf() {
        let zb = ZeroBias::new(&Base::laplace(0.8).unwrap()).unwrap();
        let mut rng = seeded(11);
        let n = 200_000;
        let mut xs: Vec<f64> = (0..n).map(|_| zb.sample(&mut rng)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let f = zb.cdf(*x);
            d = d.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
        }
        assert!(d < 1.63 / (n as f64).sqrt(), "ks {d}");
    }

    #[test]
    fn quantile_inverts() {
        let zb = ZeroBias::new(&Base::unit_uniform()).unwrap();
        for &u in &[0.01, 0.3, 0.5, 0.9] {
            let x = zb.quantile(u).unwrap();
            assert!((zb.cdf(x) - u).abs() < 1e-12);
        }
    }
}
