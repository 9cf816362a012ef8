use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Location, asymmetry and scale of AL(mu, a, b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlParams {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
}

impl AlParams {
    pub fn new(mu: f64, a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() || !mu.is_finite() || !a.is_finite() {
            return domain(format!("AL parameters need finite mu, a and b > 0 (got mu={mu}, a={a}, b={b})"));
        }
        let p = AlParams { mu, a, b };
        debug_assert!(p.alpha() > p.beta().abs());
        Ok(p)
    }

    /// AL(0, a, sqrt(sigma2 - a^2)): the law with mean a and variance sigma2.
    pub fn from_mean_variance(a: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > a * a) {
            return domain(format!("variance {sigma2} must exceed a^2 = {}", a * a));
        }
        Self::new(0.0, a, (sigma2 - a * a).sqrt())
    }

    pub fn alpha(&self) -> f64 {
        (2.0 + (self.a / self.b).powi(2)).sqrt() / self.b
    }

    pub fn beta(&self) -> f64 {
        self.a / (self.b * self.b)
    }

    /// Decay rate of the right tail, alpha - beta.
    pub fn rate_right(&self) -> f64 {
        let s = (2.0 * self.b * self.b + self.a * self.a).sqrt();
        // alpha - beta = 2 / (s + a), written without cancellation.
        2.0 / (s + self.a)
    }

    /// Decay rate of the left tail, alpha + beta.
    pub fn rate_left(&self) -> f64 {
        let s = (2.0 * self.b * self.b + self.a * self.a).sqrt();
        2.0 / (s - self.a)
    }

    /// P(Z > mu).
    pub fn weight_right(&self) -> f64 {
        let (l, r) = (self.rate_left(), self.rate_right());
        l / (l + r)
    }

    pub fn weight_left(&self) -> f64 {
        let (l, r) = (self.rate_left(), self.rate_right());
        r / (l + r)
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.a
    }

    pub fn variance(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let y = x - self.mu;
        let norm = 1.0 / (2.0 * self.b * self.b + self.a * self.a).sqrt();
        norm * (self.beta() * y - self.alpha() * y.abs()).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.mu;
        if y >= 0.0 {
            1.0 - self.weight_right() * (-self.rate_right() * y).exp()
        } else {
            self.weight_left() * (self.rate_left() * y).exp()
        }
    }

    /// Upper tail P(Z > x), accurate far in the right tail.
    pub fn sf(&self, x: f64) -> f64 {
        let y = x - self.mu;
        if y >= 0.0 {
            self.weight_right() * (-self.rate_right() * y).exp()
        } else {
            1.0 - self.weight_left() * (self.rate_left() * y).exp()
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level {u} outside (0,1)"));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        let pl = self.weight_left();
        if u <= pl {
            self.mu + (u / pl).ln() / self.rate_left()
        } else {
            self.mu - ((1.0 - u) / self.weight_right()).ln() / self.rate_right()
        }
    }

    pub fn cf(&self, t: f64) -> Complex64 {
        let num = Complex64::new(0.0, self.mu * t).exp();
        num / Complex64::new(1.0 + 0.5 * self.b * self.b * t * t, -self.a * t)
    }

    /// mu + a X + b sqrt(X) N with X ~ Exp(1), N ~ N(0,1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x: f64 = Exp1.sample(rng);
        let n: f64 = StandardNormal.sample(rng);
        self.mu + self.a * x + self.b * x.sqrt() * n
    }

    /// E[(x - Z)^+] = integral of the cdf over (-inf, x].
    pub fn integrated_cdf(&self, x: f64) -> f64 {
        let y = x - self.mu;
        let (l, r) = (self.rate_left(), self.rate_right());
        if y < 0.0 {
            self.weight_left() * (l * y).exp() / l
        } else {
            self.weight_left() / l + y - self.weight_right() * (-(-r * y).exp_m1()) / r
        }
    }

    /// E[(Z - x)^+] = integral of the survival function over [x, inf).
    pub fn integrated_sf(&self, x: f64) -> f64 {
        let y = x - self.mu;
        let (l, r) = (self.rate_left(), self.rate_right());
        if y >= 0.0 {
            self.weight_right() * (-r * y).exp() / r
        } else {
            self.weight_right() / r - y - self.weight_left() * (-(l * y).exp_m1()) / l
        }
    }

    /// E[Z 1{Z <= x}].
    pub fn partial_moment(&self, x: f64) -> f64 {
        self.mu * self.cdf(x) + self.centered_partial(x, 1)
    }

    /// E[Z^2 1{Z <= x}].
    pub fn partial_second_moment(&self, x: f64) -> f64 {
        let m = self.mu;
        m * m * self.cdf(x) + 2.0 * m * self.centered_partial(x, 1) + self.centered_partial(x, 2)
    }

    /// E[Y^k 1{Y <= y}] for Y = Z - mu, k in {1, 2}.
    fn centered_partial(&self, x: f64, k: u32) -> f64 {
        let y = x - self.mu;
        let (l, r) = (self.rate_left(), self.rate_right());
        let (pl, pr) = (self.weight_left(), self.weight_right());
        if y <= 0.0 {
            let s = -y;
            let e = (-l * s).exp();
            match k {
                1 => -pl * e * (s + 1.0 / l),
                _ => pl * e * (s * s + 2.0 * s / l + 2.0 / (l * l)),
            }
        } else {
            let e = (-r * y).exp();
            match k {
                1 => -pl / l + pr * (1.0 / r - e * (y + 1.0 / r)),
                _ => pl * 2.0 / (l * l) + pr * (2.0 / (r * r) - e * (y * y + 2.0 * y / r + 2.0 / (r * r))),
            }
        }
    }

    /// E[Z^k].
    pub fn raw_moment(&self, k: u32) -> f64 {
        let (l, r) = (self.rate_left(), self.rate_right());
        let (pl, pr) = (self.weight_left(), self.weight_right());
        let mut total = 0.0;
        let mut binom = 1.0;
        let mut fact = 1.0;
        for j in 0..=k {
            if j > 0 {
                binom *= (k - j + 1) as f64 / j as f64;
                fact *= j as f64;
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let ey = pr * fact / r.powi(j as i32) + pl * sign * fact / l.powi(j as i32);
            total += binom * self.mu.powi((k - j) as i32) * ey;
        }
        total
    }

    /// E[Z^k 1{Z > 0}].
    pub fn positive_moment(&self, k: u32) -> f64 {
        let m = self.mu;
        let (l, r) = (self.rate_left(), self.rate_right());
        let (pl, pr) = (self.weight_left(), self.weight_right());
        let fact: f64 = (1..=k).map(|j| j as f64).product();
        if m < 0.0 {
            // Only the right exponential reaches past 0; memorylessness.
            return pr * (r * m).exp() * fact / r.powi(k as i32);
        }
        // Right part in full: E[(m + E)^k], E ~ Exp(r).
        let mut right = 0.0;
        let mut binom = 1.0;
        let mut fj = 1.0;
        for j in 0..=k {
            if j > 0 {
                binom *= (k - j + 1) as f64 / j as f64;
                fj *= j as f64;
            }
            right += binom * m.powi((k - j) as i32) * fj / r.powi(j as i32);
        }
        // Left part: E[(m - E)^k 1{E < m}], E ~ Exp(l), by I_k = m^k - (k/l) I_{k-1}.
        let mut ik = -(-l * m).exp_m1();
        for j in 1..=k {
            ik = m.powi(j as i32) - (j as f64 / l) * ik;
        }
        pr * right + pl * ik
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    #[test]
    fn reference_pdf_values() {
        let p = AlParams::new(0.0, 0.0, 1.0).unwrap();
        assert!((p.pdf(0.0) - 0.5f64.sqrt()).abs() < 1e-15);
        let p = AlParams::new(0.0, 1.0, 1.0).unwrap();
        let want = (1.0 - 3f64.sqrt()).exp() / 3f64.sqrt();
        assert!((p.pdf(1.0) - want).abs() < 1e-15);
        assert!((p.pdf(1.0) - 0.27766).abs() < 1e-5);
    }

    #[test]
    fn cdf_branches() {
        let p = AlParams::new(0.0, 1.0, 1.0).unwrap();
        let want = (3f64.sqrt() - 1.0) / (2.0 * 3f64.sqrt());
        assert!((p.cdf(0.0) - want).abs() < 1e-15);
        let q = AlParams::new(0.3, 0.0, 2.0).unwrap();
        assert!((q.cdf(0.3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cf_substitution() {
        let p = AlParams::new(0.0, 0.0, 2f64.sqrt()).unwrap();
        let v = p.cf(1.0);
        assert!((v.re - 0.5).abs() < 1e-15 && v.im.abs() < 1e-15);
    }

    #[test]
    fn rates_match_alpha_beta() {
        for &(a, b) in &[(0.0, 1.0), (2.0, 0.5), (-3.0, 1.5)] {
            let p = AlParams::new(0.0, a, b).unwrap();
            assert!((p.rate_right() - (p.alpha() - p.beta())).abs() < 1e-12 * p.alpha());
            assert!((p.rate_left() - (p.alpha() + p.beta())).abs() < 1e-12 * p.alpha());
        }
    }

    #[test]
    fn moments_against_quadrature() {
        let p = AlParams::new(0.4, -0.7, 1.3).unwrap();
        for k in 1..=4u32 {
            let q = quad::integrate_pieces(|x| x.powi(k as i32) * p.pdf(x), -80.0, 80.0, &[0.4], 1e-13).unwrap();
            assert!((p.raw_moment(k) - q).abs() < 1e-9, "k={k}");
            let q = quad::integrate_pieces(|x| x.powi(k as i32) * p.pdf(x), 0.0, 80.0, &[0.4], 1e-13).unwrap();
            assert!((p.positive_moment(k) - q).abs() < 1e-9, "k={k}");
        }
        assert!((p.raw_moment(1) - p.mean()).abs() < 1e-13);
        assert!((p.raw_moment(2) - p.mean().powi(2) - p.variance()).abs() < 1e-12);
    }

    #[test]
    fn integrated_tails() {
        let p = AlParams::new(-0.2, 0.8, 0.9).unwrap();
        for &x in &[-3.0, -0.2, 0.5, 4.0] {
            let g = quad::integrate(|t| p.cdf(t), -90.0, x, 1e-13).unwrap();
            assert!((p.integrated_cdf(x) - g).abs() < 1e-10, "x={x} {} {g}", p.integrated_cdf(x));
            let h = quad::integrate(|t| p.sf(t), x, 90.0, 1e-13).unwrap();
            assert!((p.integrated_sf(x) - h).abs() < 1e-10);
        }
    }
}
