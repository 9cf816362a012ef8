use rand::Rng;

use super::{check_defined, nonnegative, signed_density};
use crate::distributions::Base;
use crate::error::{domain, Result};
use crate::quad;

/// Target knot count of the tabulated cdf.
pub const GRID_POINTS: usize = 4096;
const TAIL_DENSITY: f64 = 1e-13;
const PILOT_POINTS: usize = 257;

/// Tabulated law of W^A: exact density, cdf integrated knot to knot, monotone cubic
/// Hermite interpolation in between and inversion for quantiles and sampling.
#[derive(Debug, Clone)]
pub struct EquilibriumView {
    base: Base,
    a: f64,
    s2: f64,
    knots: Vec<f64>,
    cdf: Vec<f64>,
    slope: Vec<f64>,
}

impl EquilibriumView {
    pub fn new(base: &Base) -> Result<Self> {
        let (a, s2) = check_defined(base)?;
        let dens = |w: f64| signed_density(base, a, s2, w).and_then(|v| nonnegative(w, v));
        let (lo, hi) = base.support();
        let scale = s2.sqrt() + a.abs();
        let left = if lo.is_finite() { lo.min(0.0) } else { expand_tail(&dens, -1.0, scale)? };
        let right = if hi.is_finite() { hi.max(0.0) } else { expand_tail(&dens, 1.0, scale)? };

        let mut kinks = base.breakpoints_in(left, right);
        kinks.push(0.0);
        kinks.retain(|x| *x > left && *x < right);

        // Pilot pass: trapezoid cdf on a uniform grid, only used to place knots.
        let pilot_x: Vec<f64> = (0..PILOT_POINTS).map(|i| left + (right - left) * i as f64 / (PILOT_POINTS - 1) as f64).collect();
        let pilot_d: Vec<f64> = pilot_x.iter().map(|&x| dens(x)).collect::<Result<_>>()?;
        let mut pilot_c = vec![0.0; PILOT_POINTS];
        for i in 1..PILOT_POINTS {
            pilot_c[i] = pilot_c[i - 1] + 0.5 * (pilot_d[i] + pilot_d[i - 1]) * (pilot_x[i] - pilot_x[i - 1]);
        }
        let total = pilot_c[PILOT_POINTS - 1].max(f64::MIN_POSITIVE);
        let n_q = GRID_POINTS * 3 / 4;
        let n_u = GRID_POINTS - n_q - kinks.len().min(GRID_POINTS / 8);
        let mut knots = Vec::with_capacity(GRID_POINTS + kinks.len() + 2);
        let mut j = 0;
        for i in 0..n_q {
            let target = total * i as f64 / (n_q - 1) as f64;
            while j + 1 < PILOT_POINTS - 1 && pilot_c[j + 1] < target {
                j += 1;
            }
            let (c0, c1) = (pilot_c[j], pilot_c[j + 1]);
            let t = if c1 > c0 { ((target - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
            knots.push(pilot_x[j] + t * (pilot_x[j + 1] - pilot_x[j]));
        }
        for i in 0..n_u {
            knots.push(left + (right - left) * i as f64 / (n_u - 1) as f64);
        }
        knots.extend(kinks);
        knots.push(left);
        knots.push(right);
        knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let eps = 1e-12 * (right - left);
        knots.dedup_by(|x, y| (*x - *y).abs() <= eps);

        let d: Vec<f64> = knots.iter().map(|&x| dens(x)).collect::<Result<_>>()?;
        let mut cdf = vec![0.0; knots.len()];
        for i in 1..knots.len() {
            let piece = quad::integrate(|x| dens(x).unwrap_or(f64::NAN), knots[i - 1], knots[i], 1e-14)?;
            cdf[i] = cdf[i - 1] + piece;
        }
        let slope = monotone_slopes(&knots, &cdf, &d);
        Ok(EquilibriumView { base: base.clone(), a, s2, knots, cdf, slope })
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    /// (a, sigma^2) of the base.
    pub fn moments(&self) -> (f64, f64) {
        (self.a, self.s2)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Tabulated range [left, right].
    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Integrated mass over the tabulated range.
    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn density(&self, w: f64) -> Result<f64> {
        signed_density(&self.base, self.a, self.s2, w).map(|v| v.max(0.0))
    }

    fn locate(&self, w: f64) -> usize {
        match self.knots.binary_search_by(|k| k.partial_cmp(&w).unwrap()) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        }
    }

    fn hermite(&self, i: usize, t: f64) -> (f64, f64) {
        let h = self.knots[i + 1] - self.knots[i];
        let (y0, y1, m0, m1) = (self.cdf[i], self.cdf[i + 1], self.slope[i], self.slope[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * m1;
        let dv = ((6.0 * t2 - 6.0 * t) * y0 + (-6.0 * t2 + 6.0 * t) * y1) / h + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv)
    }

    /// Interpolated cdf.
    pub fn cdf(&self, w: f64) -> f64 {
        let (l, r) = self.range();
        if w <= l {
            return 0.0;
        }
        if w >= r {
            return self.total_mass().min(1.0);
        }
        let i = self.locate(w);
        let t = (w - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        self.hermite(i, t).0.clamp(0.0, 1.0)
    }

    /// cdf by quadrature from the nearest knot below.
    pub fn cdf_exact(&self, w: f64) -> Result<f64> {
        let (l, r) = self.range();
        if w <= l {
            return Ok(0.0);
        }
        if w >= r {
            return Ok(self.total_mass());
        }
        let i = self.locate(w);
        let piece = quad::integrate(|x| self.density(x).unwrap_or(f64::NAN), self.knots[i], w, 1e-14)?;
        Ok(self.cdf[i] + piece)
    }

    /// Generalised inverse of the interpolated cdf, polished to 1e-12.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level {u} outside (0,1)"));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let n = self.knots.len();
        if u <= self.cdf[0] {
            return self.knots[0];
        }
        if u >= self.cdf[n - 1] {
            return self.knots[n - 1];
        }
        // First index with cdf >= u.
        let j = self.cdf.partition_point(|c| *c < u);
        let i = j - 1;
        let h = self.knots[i + 1] - self.knots[i];
        let (c0, c1) = (self.cdf[i], self.cdf[i + 1]);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut t = ((u - c0) / (c1 - c0)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let (v, dv) = self.hermite(i, t);
            let g = v - u;
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            if (hi - lo) * h <= 1e-13 * self.knots[i].abs().max(1.0) || g == 0.0 {
                break;
            }
            let step = if dv > 0.0 { t - g / (dv * h) } else { f64::NAN };
            let next = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
            if (next - t).abs() * h <= 1e-14 * self.knots[i].abs().max(1.0) {
                t = next;
                break;
            }
            t = next;
        }
        self.knots[i] + t * h
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                return self.quantile_unchecked(u);
            }
        }
    }
}

fn expand_tail<F: Fn(f64) -> Result<f64>>(dens: &F, sign: f64, scale: f64) -> Result<f64> {
    let mut s = 2.0 * scale;
    for _ in 0..40 {
        let d = dens(sign * s)?;
        if d * s.max(1.0) < TAIL_DENSITY {
            return Ok(sign * s);
        }
        s *= 1.5;
    }
    Ok(sign * s)
}

/// Fritsch–Carlson limited slopes, starting from the exact density.
fn monotone_slopes(x: &[f64], y: &[f64], d: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m: Vec<f64> = d.iter().map(|v| v.max(0.0)).collect();
    for i in 0..n - 1 {
        let h = x[i + 1] - x[i];
        let delta = (y[i + 1] - y[i]) / h;
        if delta <= 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let (al, be) = (m[i] / delta, m[i + 1] / delta);
        let r = al * al + be * be;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[i] = tau * al * delta;
            m[i + 1] = tau * be * delta;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_table() {
        let v = EquilibriumView::new(&Base::rademacher()).unwrap();
        assert!((v.total_mass() - 1.0).abs() < 1e-10);
        assert!((v.cdf(0.0) - 0.5).abs() < 1e-10);
        assert!((v.quantile(0.875).unwrap() - 0.5).abs() < 1e-10);
        for &w in &[-0.7, -0.2, 0.3, 0.9] {
            let want = if w < 0.0 { 0.5 * (1.0 + w) * (1.0 + w) } else { 1.0 - 0.5 * (1.0 - w) * (1.0 - w) };
            assert!((v.cdf(w) - want).abs() < 1e-10);
            assert!((v.cdf_exact(w).unwrap() - want).abs() < 1e-10);
        }
        assert!(v.quantile(1.0).is_err());
    }
}
