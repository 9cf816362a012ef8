//! Closed-form error bounds for AL approximation. Each formula checks its own
//! hypotheses; in soft mode a failed hypothesis yields +inf instead of an error.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Formula {
    #[serde(rename = "3.51")]
    KBeta,
    #[serde(rename = "3.52")]
    KBetaWa,
    #[serde(rename = "kolb")]
    KMoment,
    #[serde(rename = "3.53")]
    W,
    #[serde(rename = "3.54")]
    WWa,
    #[serde(rename = "3.55")]
    KWaMean,
    #[serde(rename = "3.56")]
    D2,
    #[serde(rename = "4.1k1")]
    PerturbKChebyshev,
    #[serde(rename = "4.1w1")]
    PerturbW,
    #[serde(rename = "4.1k2")]
    PerturbKTail,
    #[serde(rename = "4.1k3")]
    PerturbKNormal,
    #[serde(rename = "dddw")]
    PerturbWNormal,
    #[serde(rename = "kb")]
    GeoKInverse,
    #[serde(rename = "4.14")]
    GeoKMoment,
    #[serde(rename = "wb")]
    GeoW,
    #[serde(rename = "4.13")]
    GeoD2,
    #[serde(rename = "5.11")]
    RandstdK,
    #[serde(rename = "5.12")]
    RandstdW,
    #[serde(rename = "5.13")]
    RandstdD12,
}

impl Formula {
    pub const ALL: [Formula; 19] = [
        Formula::KBeta,
        Formula::KBetaWa,
        Formula::KMoment,
        Formula::W,
        Formula::WWa,
        Formula::KWaMean,
        Formula::D2,
        Formula::PerturbKChebyshev,
        Formula::PerturbW,
        Formula::PerturbKTail,
        Formula::PerturbKNormal,
        Formula::PerturbWNormal,
        Formula::GeoKInverse,
        Formula::GeoKMoment,
        Formula::GeoW,
        Formula::GeoD2,
        Formula::RandstdK,
        Formula::RandstdW,
        Formula::RandstdD12,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Formula::KBeta => "3.51",
            Formula::KBetaWa => "3.52",
            Formula::KMoment => "kolb",
            Formula::W => "3.53",
            Formula::WWa => "3.54",
            Formula::KWaMean => "3.55",
            Formula::D2 => "3.56",
            Formula::PerturbKChebyshev => "4.1k1",
            Formula::PerturbW => "4.1w1",
            Formula::PerturbKTail => "4.1k2",
            Formula::PerturbKNormal => "4.1k3",
            Formula::PerturbWNormal => "dddw",
            Formula::GeoKInverse => "kb",
            Formula::GeoKMoment => "4.14",
            Formula::GeoW => "wb",
            Formula::GeoD2 => "4.13",
            Formula::RandstdK => "5.11",
            Formula::RandstdW => "5.12",
            Formula::RandstdD12 => "5.13",
        }
    }

    pub fn parse(id: &str) -> Result<Formula> {
        let id = id.trim().trim_start_matches('(').trim_end_matches(')');
        Formula::ALL
            .iter()
            .copied()
            .find(|f| f.id() == id)
            .ok_or_else(|| Error::Domain(format!("unknown formula id `{id}`")))
    }

    /// The distance the formula bounds.
    pub fn metric(self) -> &'static str {
        match self {
            Formula::KBeta | Formula::KBetaWa | Formula::KMoment | Formula::KWaMean => "ks",
            Formula::PerturbKChebyshev | Formula::PerturbKTail | Formula::PerturbKNormal => "ks",
            Formula::GeoKInverse | Formula::GeoKMoment | Formula::RandstdK => "ks",
            Formula::W | Formula::WWa | Formula::PerturbW | Formula::PerturbWNormal | Formula::GeoW | Formula::RandstdW => "w1",
            Formula::D2 | Formula::GeoD2 => "d2",
            Formula::RandstdD12 => "d12",
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

// Literal constants, one name per appearance. `CONSTANTS` below cites each of them.
const KB_SLOPE: f64 = 14.0;
const KB_ASYM: f64 = 7.0;
const KB_TAIL: f64 = 5.0;
const KB_TAIL_ASYM: f64 = 7.0;
const KWA_SLOPE: f64 = 2.0;
const KWA_ASYM: f64 = 4.0;
const KWA_TAIL: f64 = 2.0;
const KWA_TAIL_ASYM: f64 = 4.0;
const W_FACTOR: f64 = 2.0;
const WWA_SLOPE: f64 = 2.0;
const KWAM_SLOPE: f64 = 2.0;
const KWAM_VAR: f64 = 4.0;
const PERTURB_CUBE: f64 = 1.05;
const PERTURB_TAIL_LEAD: f64 = 2.0;
const PERTURB_NORMAL_C: f64 = 2.0;
const GEO_MOMENT_LEAD: f64 = 4.0;
const GEO_W_LEAD: f64 = 2.0;
const GEO_W_MOMENT: f64 = 8.0;
const GEO_W_ASYM: f64 = 3.0;
const GEO_D2_CUBE: f64 = 2.0;
const GEO_D2_FOURTH: f64 = 6.0;
const RS_K_BERRY: f64 = 0.56;
const RS_K_BETA: f64 = 5.0;
const RS_W_LEAD: f64 = 2.0 * std::f64::consts::SQRT_2 / 3.0;
const RS_W_BETA: f64 = 9.168;
const RS_ASYM: f64 = 2.0;
const RS_D12_LEAD: f64 = 3.0;

/// (formula id, symbol, value) for every hard-coded constant.
pub const CONSTANTS: &[(&str, &str, f64)] = &[
    ("3.51", "beta slope", KB_SLOPE),
    ("3.51", "beta slope, asymmetry", KB_ASYM),
    ("3.51", "tail factor", KB_TAIL),
    ("3.51", "tail factor, asymmetry", KB_TAIL_ASYM),
    ("3.52", "beta slope", KWA_SLOPE),
    ("3.52", "beta slope, asymmetry", KWA_ASYM),
    ("3.52", "tail factor", KWA_TAIL),
    ("3.52", "tail factor, asymmetry", KWA_TAIL_ASYM),
    ("3.53", "factor", W_FACTOR),
    ("3.54", "slope", WWA_SLOPE),
    ("3.55", "slope", KWAM_SLOPE),
    ("3.55", "variance term", KWAM_VAR),
    ("4.1k1", "cube-root factor", PERTURB_CUBE),
    ("4.1k2", "leading factor", PERTURB_TAIL_LEAD),
    ("4.1k3", "c factor", PERTURB_NORMAL_C),
    ("4.14", "leading factor", GEO_MOMENT_LEAD),
    ("wb", "leading factor", GEO_W_LEAD),
    ("wb", "moment factor", GEO_W_MOMENT),
    ("wb", "asymmetry factor", GEO_W_ASYM),
    ("4.13", "cubic asymmetry numerator", GEO_D2_CUBE),
    ("4.13", "fourth moment divisor", GEO_D2_FOURTH),
    ("5.11", "third moment factor", RS_K_BERRY),
    ("5.11", "beta term", RS_K_BETA),
    ("5.12", "third moment factor", RS_W_LEAD),
    ("5.12", "beta term", RS_W_BETA),
    ("5.12", "asymmetry term", RS_ASYM),
    ("5.13", "fourth moment shift", RS_D12_LEAD),
];

/// Named inputs. Which fields a formula needs is listed in its error when one is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundInput {
    pub a: Option<f64>,
    pub sigma2: Option<f64>,
    pub beta: Option<f64>,
    pub tail_prob: Option<f64>,
    /// E|W - W^A|.
    pub e_abs_diff: Option<f64>,
    /// E[(W - W^A)^2].
    pub e_sq_diff: Option<f64>,
    /// E|E[W - W^A | W]|.
    pub e_abs_cond: Option<f64>,
    /// E|W - W^A|^k.
    pub e_k_diff: Option<f64>,
    pub k: Option<f64>,
    pub p: Option<f64>,
    pub tau: Option<f64>,
    pub b: Option<f64>,
    pub n: Option<f64>,
    /// Tail constant C of P(|eta| > s) <= C tau^n / s^n.
    pub c_tail: Option<f64>,
    pub rho3: Option<f64>,
    /// rho_{k+2}.
    pub rho_k2: Option<f64>,
    /// E|X_1|^3.
    pub abs3: Option<f64>,
    /// E[X_1^3], checked to vanish when given.
    pub x3: Option<f64>,
    /// E[X_1^4].
    pub x4: Option<f64>,
    /// sum_i E|X_i|^3.
    pub sum_abs3: Option<f64>,
    /// sum_i (3 + E[X_i^4] / sigma^4).
    pub sum_fourth: Option<f64>,
    /// sup_i || F_{Y_i}^{-1} - F_{Y_i^A}^{-1} ||.
    pub sup_inv_dist: Option<f64>,
}

impl BoundInput {
    /// Parses `k=v,k=v`; `sigma` is accepted and stored as `sigma2`.
    pub fn parse(s: &str) -> Result<BoundInput> {
        let mut map = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::Domain(format!("expected key=value, got `{part}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Domain(format!("`{v}` is not a number")))?;
            let (k, v) = if k.trim() == "sigma" { ("sigma2".to_string(), v * v) } else { (k.trim().to_string(), v) };
            map.insert(k, serde_json::Value::from(v));
        }
        serde_json::from_value(serde_json::Value::Object(map.into_iter().collect())).map_err(|e| Error::Domain(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Strict,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub condition: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    pub formula_id: Formula,
    pub hypothesis_report: Vec<Check>,
}

impl BoundValue {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypothesis_report.iter().all(|c| c.holds)
    }
}

struct Ctx<'a> {
    f: Formula,
    inp: &'a BoundInput,
    checks: Vec<Check>,
}

impl<'a> Ctx<'a> {
    fn need(&self, v: Option<f64>, name: &str) -> Result<f64> {
        match v {
            Some(x) if x.is_nan() => domain(format!("{} for {} is NaN", name, self.f)),
            Some(x) => Ok(x),
            None => Err(Error::Capability(format!("formula {} needs `{}`", self.f, name))),
        }
    }

    fn check(&mut self, holds: bool, condition: impl Into<String>) {
        self.checks.push(Check { condition: condition.into(), holds });
    }

    fn finish(self, mode: Mode, value: f64) -> Result<BoundValue> {
        if let Some(bad) = self.checks.iter().find(|c| !c.holds) {
            if mode == Mode::Strict {
                return Err(Error::Hypothesis { formula: self.f.id(), condition: bad.condition.clone() });
            }
            return Ok(BoundValue { value: f64::INFINITY, formula_id: self.f, hypothesis_report: self.checks });
        }
        Ok(BoundValue { value, formula_id: self.f, hypothesis_report: self.checks })
    }

    /// (a, sigma^2) with sigma^2 > a^2 checked.
    fn equilibrium_moments(&mut self) -> Result<(f64, f64)> {
        let a = self.need(self.inp.a, "a")?;
        let s2 = self.need(self.inp.sigma2, "sigma2")?;
        self.check(s2 > a * a, "sigma^2 > a^2");
        Ok((a, s2))
    }

    fn nonneg(&mut self, v: Option<f64>, name: &str) -> Result<f64> {
        let x = self.need(v, name)?;
        self.check(x >= 0.0, format!("{name} >= 0"));
        Ok(x)
    }

    fn unit_open(&mut self, v: Option<f64>, name: &str) -> Result<f64> {
        let x = self.need(v, name)?;
        self.check(x > 0.0 && x < 1.0, format!("0 < {name} < 1"));
        Ok(x)
    }
}

/// Evaluates one formula.
pub fn evaluate(f: Formula, inp: &BoundInput, mode: Mode) -> Result<BoundValue> {
    let mut cx = Ctx { f, inp, checks: Vec::new() };
    let v = match f {
        Formula::KBeta | Formula::KBetaWa | Formula::KMoment | Formula::W | Formula::WWa | Formula::KWaMean | Formula::D2 => {
            thm35(&mut cx)?
        }
        Formula::PerturbKChebyshev | Formula::PerturbW | Formula::PerturbKTail | Formula::PerturbKNormal | Formula::PerturbWNormal => {
            perturb(&mut cx)?
        }
        Formula::GeoKInverse | Formula::GeoKMoment | Formula::GeoW | Formula::GeoD2 => geo(&mut cx)?,
        Formula::RandstdK | Formula::RandstdW | Formula::RandstdD12 => randstd(&mut cx)?,
    };
    cx.finish(mode, v)
}

fn thm35(cx: &mut Ctx) -> Result<f64> {
    let (a, s2) = cx.equilibrium_moments()?;
    let aa = a.abs();
    // Keep the arithmetic finite when the hypothesis fails in soft mode.
    let d = (s2 - a * a).max(f64::MIN_POSITIVE);
    let r = (2.0 * s2 - a * a).max(f64::MIN_POSITIVE).sqrt();
    let inp = cx.inp;
    Ok(match cx.f {
        Formula::KBeta | Formula::KBetaWa => {
            let beta = cx.need(inp.beta, "beta")?;
            cx.check(beta > 0.0, "beta > 0");
            let t = cx.need(inp.tail_prob, "tail_prob")?;
            cx.check((0.0..=1.0).contains(&t), "0 <= tail_prob <= 1");
            if cx.f == Formula::KBeta {
                (KB_SLOPE / r + KB_ASYM * aa / d) * beta + (KB_TAIL + KB_TAIL_ASYM * aa / r) * t
            } else {
                (KWA_SLOPE / r + KWA_ASYM * aa / d) * beta + (KWA_TAIL + KWA_TAIL_ASYM * aa / r) * t
            }
        }
        Formula::KMoment => {
            let k = cx.need(inp.k, "k")?;
            cx.check(k >= 1.0, "k >= 1");
            let m = cx.nonneg(inp.e_k_diff, "e_k_diff")?;
            let k = k.max(1.0);
            (KB_SLOPE / r + KB_ASYM * aa / d).powf(k / (k + 1.0))
                * ((k + k.powf(-k)) * (KB_TAIL + KB_TAIL_ASYM * aa / r) * m).powf(1.0 / (k + 1.0))
        }
        Formula::W => W_FACTOR * cx.nonneg(inp.e_abs_diff, "e_abs_diff")?,
        Formula::WWa => (1.0 + WWA_SLOPE / r) * cx.nonneg(inp.e_abs_diff, "e_abs_diff")?,
        Formula::KWaMean => (KWAM_SLOPE / r + KWAM_VAR / d) * cx.nonneg(inp.e_abs_diff, "e_abs_diff")?,
        Formula::D2 => {
            let c = cx.nonneg(inp.e_abs_cond, "e_abs_cond")?;
            let q = cx.nonneg(inp.e_sq_diff, "e_sq_diff")?;
            d / r * c + q
        }
        _ => unreachable!(),
    })
}

fn perturb(cx: &mut Ctx) -> Result<f64> {
    let inp = cx.inp;
    let a = cx.need(inp.a, "a")?;
    let b = cx.need(inp.b, "b")?;
    let tau = cx.need(inp.tau, "tau")?;
    cx.check(b > 0.0, "b > 0");
    cx.check(tau > 0.0, "tau > 0");
    let (b2, t2) = (b * b, tau * tau);
    let root = (a * a + 2.0 * b2 + 2.0 * t2).sqrt();
    let c = KB_SLOPE / root + KB_ASYM * a.abs() / (b2 + t2);
    let d = KB_TAIL + KB_TAIL_ASYM * a.abs() / root;
    let tail = d * t2 / (b2 + t2);
    let gen = (2.0 * b2 + a * a).sqrt();
    Ok(match cx.f {
        Formula::PerturbKChebyshev => PERTURB_CUBE * (b2 * c * c * d * t2 / (b2 + t2)).cbrt() + tail,
        Formula::PerturbW => tau + t2 / gen,
        Formula::PerturbKTail => {
            let n = cx.need(inp.n, "n")?;
            cx.check(n >= 2.0, "n >= 2");
            let cc = cx.need(inp.c_tail, "c_tail")?;
            cx.check(cc > 0.0, "c_tail > 0");
            PERTURB_TAIL_LEAD * (2.0 * b2 * c.powf(n) * cc * d * tau.powf(n) / ((b2 + t2) * (n * n + 3.0 * n + 2.0))).powf(1.0 / (n + 1.0)) + tail
        }
        Formula::PerturbKNormal => {
            cx.check(tau < 1.0, "tau < 1");
            let l = (1.0 / tau).ln();
            (PERTURB_NORMAL_C * c + b2 * d / (2.0 * (2.0 * PI).sqrt() * (b2 + t2) * l)) * tau * l.max(0.0).sqrt() + tail
        }
        Formula::PerturbWNormal => {
            cx.check(tau < 1.0, "tau < 1");
            (2.0 / PI).sqrt() * tau + t2 / gen
        }
        _ => unreachable!(),
    })
}

fn geo(cx: &mut Ctx) -> Result<f64> {
    let inp = cx.inp;
    let p = cx.unit_open(inp.p, "p")?;
    let a = cx.need(inp.a, "a")?;
    let s2 = cx.need(inp.sigma2, "sigma2")?;
    cx.check(s2 > 0.0, "sigma^2 > 0");
    let (aa, s) = (a.abs(), s2.max(0.0).sqrt());
    let r = (2.0 * s2 + a * a).sqrt();
    let slope = KB_SLOPE / r + KB_ASYM * aa / s2;
    Ok(match cx.f {
        Formula::GeoKInverse => {
            cx.check(s2 > p * a * a, "sigma^2 > p a^2");
            p.sqrt() * slope * cx.nonneg(inp.sup_inv_dist, "sup_inv_dist")?
        }
        Formula::GeoKMoment => {
            let k = cx.need(inp.k, "k")?;
            cx.check(k >= 1.0, "k >= 1");
            let rho = cx.need(inp.rho_k2, "rho_k2")?;
            cx.check(rho.is_finite() && rho >= 0.0, "rho_{k+2} finite");
            let k = k.max(1.0);
            GEO_MOMENT_LEAD
                * p.powf(k / (2.0 * (k + 1.0)))
                * slope.powf(k / (k + 1.0))
                * ((k + k.powf(-k)) * (KB_TAIL + KB_TAIL_ASYM * aa / r) * rho / s2).powf(1.0 / (k + 1.0))
        }
        Formula::GeoW => {
            let rho3 = cx.need(inp.rho3, "rho3")?;
            cx.check(rho3.is_finite() && rho3 >= 0.0, "rho_3 finite");
            GEO_W_LEAD
                * p.sqrt()
                * ((s2 + a * a).sqrt() + GEO_W_MOMENT * (1.0 + GEO_W_ASYM * p.sqrt() * aa / s) * (rho3 + aa.powi(3)) / (3.0 * s2))
        }
        Formula::GeoD2 => {
            cx.check(s2 > p * a * a, "sigma^2 > p a^2");
            if let Some(x3) = inp.x3 {
                cx.check(x3.abs() <= 1e-12, "E[X_1^3] = 0");
            }
            let abs3 = cx.nonneg(inp.abs3, "abs3")?;
            let x4 = cx.nonneg(inp.x4, "x4")?;
            let gap = (s2 - p * a * a).max(f64::MIN_POSITIVE);
            let q = 1.0 - p;
            let inner = std::f64::consts::SQRT_2 * s / q
                + s * p.sqrt() * (1.0 / p).ln() / q * (2.0 + abs3 / (s2 * s))
                + aa
                + GEO_D2_CUBE * p * aa.powi(3) / (3.0 * gap);
            p * (s2 / r * inner + s2 + p * a * a + x4 / (GEO_D2_FOURTH * gap))
        }
        _ => unreachable!(),
    })
}

fn randstd(cx: &mut Ctx) -> Result<f64> {
    let inp = cx.inp;
    let n = cx.need(inp.n, "n")?;
    cx.check(n >= 2.0, "n >= 2");
    let a = cx.need(inp.a, "a")?;
    let s2 = cx.need(inp.sigma2, "sigma2")?;
    cx.check(s2 > 0.0, "sigma > 0");
    let s = s2.max(0.0).sqrt();
    let asym = RS_ASYM * a.abs() / (n + 1.0);
    Ok(match cx.f {
        Formula::RandstdK => RS_K_BERRY / (s2 * s * n.powf(1.5)) * cx.nonneg(inp.sum_abs3, "sum_abs3")? + RS_K_BETA / n,
        Formula::RandstdW => RS_W_LEAD / (s2 * n.powf(1.5)) * cx.nonneg(inp.sum_abs3, "sum_abs3")? + RS_W_BETA * s / n + asym,
        Formula::RandstdD12 => {
            let sum4 = cx.nonneg(inp.sum_fourth, "sum_fourth")?;
            cx.check(sum4 >= RS_D12_LEAD * n, "E[X_i^4] >= 0");
            s2 / (3.0 * n * n) * sum4 + RS_W_BETA * s / n + asym
        }
        _ => unreachable!(),
    })
}

/// Coupling-moment bounds (3.51 to 3.56, kolb).
pub fn thm35_bound(f: Formula, inp: &BoundInput, mode: Mode) -> Result<BoundValue> {
    family_guard(f, &[Formula::KBeta, Formula::KBetaWa, Formula::KMoment, Formula::W, Formula::WWa, Formula::KWaMean, Formula::D2])?;
    evaluate(f, inp, mode)
}

/// Perturbation bounds.
pub fn perturb_bound(f: Formula, inp: &BoundInput, mode: Mode) -> Result<BoundValue> {
    family_guard(
        f,
        &[Formula::PerturbKChebyshev, Formula::PerturbW, Formula::PerturbKTail, Formula::PerturbKNormal, Formula::PerturbWNormal],
    )?;
    evaluate(f, inp, mode)
}

/// Geometric-sum bounds.
pub fn geo_bound(f: Formula, inp: &BoundInput, mode: Mode) -> Result<BoundValue> {
    family_guard(f, &[Formula::GeoKInverse, Formula::GeoKMoment, Formula::GeoW, Formula::GeoD2])?;
    evaluate(f, inp, mode)
}

/// Random-standardisation bounds.
pub fn randstd_bound(f: Formula, inp: &BoundInput, mode: Mode) -> Result<BoundValue> {
    family_guard(f, &[Formula::RandstdK, Formula::RandstdW, Formula::RandstdD12])?;
    evaluate(f, inp, mode)
}

fn family_guard(f: Formula, allowed: &[Formula]) -> Result<()> {
    if allowed.contains(&f) {
        Ok(())
    } else {
        domain(format!("formula {f} does not belong to this evaluator"))
    }
}
