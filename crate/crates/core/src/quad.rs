//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 60;
const MAX_EVALS: usize = 2_000_000;

/// One 15-point Kronrod rule on [a, b]; returns (kronrod, |kronrod - gauss|, kronrod of |f|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    let mut ka = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        k += WGK[j] * (f1 + f2);
        ka += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs(), (ka * h).abs())
}

/// Adaptive integral of `f` over [a, b] to absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let mut evals = 0usize;
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    let mut comp = 0.0;
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (v, err, vabs) = gk15(&mut f, lo, hi);
        evals += 15;
        if !v.is_finite() {
            return Err(Error::Numeric { x: 0.5 * (lo + hi), reason: "non-finite integrand".into() });
        }
        let tiny = (hi - lo) <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1e-300);
        // Below roundoff in the panel, or a negligible share of the budget, there is nothing left to refine.
        let floor = (50.0 * f64::EPSILON * vabs).max(1e-6 * tol);
        if err <= t.max(floor) || depth >= MAX_DEPTH || tiny {
            // Kahan summation keeps many small panels from drifting.
            let y = v - comp;
            let s = total + y;
            comp = (s - total) - y;
            total = s;
            continue;
        }
        if evals > MAX_EVALS {
            return Err(Error::Numeric { x: 0.5 * (lo + hi), reason: format!("quadrature did not converge (error {err:e})") });
        }
        let mid = 0.5 * (lo + hi);
        stack.push((mid, hi, 0.5 * t, depth + 1));
        stack.push((lo, mid, 0.5 * t, depth + 1));
    }
    Ok(total)
}

/// Integral over [a, b] split at the given interior breakpoints.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let n = pts.len() + 1;
    let mut lo = a;
    let mut sum = 0.0;
    for hi in pts.into_iter().chain(std::iter::once(b)) {
        sum += integrate(&mut f, lo, hi, tol / n as f64)?;
        lo = hi;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 1.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_and_kinked() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, 3.0, 1e-13).unwrap();
        assert!((v - (1.0 - 30f64.cos()) / 10.0).abs() < 1e-12);
        let v = integrate_pieces(|x: f64| x.abs(), -1.0, 2.0, &[0.0], 1e-14).unwrap();
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn reversed_limits() {
        let v = integrate(|x| x, 1.0, 0.0, 1e-14).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
    }
}
