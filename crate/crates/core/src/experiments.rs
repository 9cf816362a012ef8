//! Seeded experiment grids that set empirical distances against the closed-form bounds,
//! CSV output, and the self-check suite.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounds::{self, BoundInput, Formula, Mode};
use crate::distributions::{builtin_bases, AlParams, Base};
use crate::equilibrium::{
    abs_moment_bound, equilibrium_abs_moment, equilibrium_cf, equilibrium_density, equilibrium_moment, equilibrium_scale_check,
    equilibrium_signed_density,
    simulate_geometric, simulate_perturbed, EquilibriumView, GeometricCoupler, NestedCoupler, Noise,
};
use crate::error::{Error, Result};
use crate::metrics::{self, sort_samples, MetricEstimate, MetricKind};
use crate::quad;
use crate::rng::{mix64, substream};
use crate::stein::{self, SteinFn, SteinSolution, TestFn};

pub const SEED_ENV: &str = "ALAP_SEED";
pub const MIN_METRIC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Geometric,
    NestedGeometric,
    Perturbation,
    Randstd,
    Fixedpoint,
    Steincheck,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Geometric => "geometric",
            Scenario::NestedGeometric => "nested_geometric",
            Scenario::Perturbation => "perturbation",
            Scenario::Randstd => "randstd",
            Scenario::Fixedpoint => "fixedpoint",
            Scenario::Steincheck => "steincheck",
        }
    }
}

fn default_base() -> String {
    "rademacher".into()
}
fn default_a() -> Vec<f64> {
    vec![0.0]
}
fn default_t_base() -> String {
    "point:1".into()
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Ks, MetricKind::W1]
}
fn default_bootstrap() -> usize {
    metrics::BOOTSTRAP_RESAMPLES
}
fn default_noise() -> Noise {
    Noise::Normal
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

/// One experiment. Grid axes: `a` for every scenario, then `p` (geometric; q for the
/// nested scenario), `tau` (perturbation), `n` (randstd) or `sigma2` (fixedpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_base")]
    pub base: String,
    #[serde(default = "default_a")]
    pub a: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub tau: Vec<f64>,
    #[serde(default)]
    pub n: Vec<u64>,
    #[serde(default)]
    pub sigma2: Vec<f64>,
    /// AL scale of the perturbed law and of the Stein check.
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "default_noise")]
    pub noise: Noise,
    /// Block-size law of the nested scenario.
    #[serde(default = "default_t_base")]
    pub t_base: String,
    pub samples_per_cell: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Coupled pairs per cell for the coupling-moment rows (0 disables them).
    #[serde(default)]
    pub coupling_samples: usize,
    /// Record wall-clock time per cell; off gives byte-identical CSVs across runs.
    #[serde(default = "yes")]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Replaces the seed with the value of `ALAP_SEED` when set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not a u64")))?;
        }
        Ok(())
    }

    fn grid(&self) -> (&'static str, Vec<f64>) {
        match self.scenario {
            Scenario::Geometric => ("p", self.p.clone()),
            Scenario::NestedGeometric => ("q", self.p.clone()),
            Scenario::Perturbation => ("tau", self.tau.clone()),
            Scenario::Randstd => ("n", self.n.iter().map(|&n| n as f64).collect()),
            Scenario::Fixedpoint => ("sigma2", self.sigma2.clone()),
            Scenario::Steincheck => ("b", vec![self.b]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (axis, grid) = self.grid();
        if grid.is_empty() {
            return Err(Error::Config(format!("scenario {} needs a nonempty `{}` grid", self.scenario.name(), axis_key(axis))));
        }
        if self.a.is_empty() {
            return Err(Error::Config("`a` grid is empty".into()));
        }
        let metric_cells = matches!(self.scenario, Scenario::Geometric | Scenario::NestedGeometric | Scenario::Perturbation | Scenario::Randstd);
        if metric_cells && self.samples_per_cell < MIN_METRIC_SAMPLES {
            return Err(Error::Config(format!("samples_per_cell must be at least {MIN_METRIC_SAMPLES}")));
        }
        if self.samples_per_cell == 0 {
            return Err(Error::Config("samples_per_cell must be positive".into()));
        }
        if metric_cells && self.metrics.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        Ok(())
    }

    /// Grid cells in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let (axis, grid) = self.grid();
        let mut out = Vec::new();
        for &a in &self.a {
            for &x in &grid {
                let index = out.len();
                out.push(Cell { index, a, axis, x });
            }
        }
        out
    }
}

fn axis_key(axis: &str) -> &str {
    if axis == "q" {
        "p"
    } else {
        axis
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub a: f64,
    pub axis: &'static str,
    pub x: f64,
}

impl Cell {
    pub fn seed(&self, seed: u64) -> u64 {
        seed ^ mix64(self.index as u64)
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub scenario: Scenario,
    pub cell: usize,
    pub cell_params: String,
    pub metric: String,
    pub n_samples: usize,
    pub empirical: f64,
    pub conf_radius: f64,
    pub bound_formula: String,
    pub bound_value: f64,
    pub ratio: f64,
    pub wall_ms: u64,
    pub hypotheses_hold: bool,
}

impl BoundReport {
    /// A hypothesis-valid row whose empirical value exceeds its bound beyond the radius.
    pub fn violates(&self) -> bool {
        self.hypotheses_hold && self.bound_value.is_finite() && self.empirical - self.conf_radius > self.bound_value
    }
}

pub const CSV_HEADER: [&str; 10] =
    ["scenario", "cell_params", "metric", "n_samples", "empirical", "conf_radius", "bound_formula", "bound_value", "ratio", "wall_ms"];

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv<W: Write>(rows: &[BoundReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.scenario.name().to_string(),
            r.cell_params.clone(),
            r.metric.clone(),
            r.n_samples.to_string(),
            fmt_f64(r.empirical),
            fmt_f64(r.conf_radius),
            r.bound_formula.clone(),
            fmt_f64(r.bound_value),
            fmt_f64(r.ratio),
            r.wall_ms.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv_path(rows: &[BoundReport], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// Rows of a run, with the count of violated rows.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<BoundReport>,
    pub violations: usize,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    base: Base,
    t_base: Option<Base>,
}

struct RowSink<'a> {
    ctx: &'a Ctx<'a>,
    cell: &'a Cell,
    params: String,
    rows: Vec<BoundReport>,
}

impl<'a> RowSink<'a> {
    fn push(&mut self, metric: &str, est: &MetricEstimate, bound: Option<(Formula, BoundInput)>) -> Result<()> {
        match bound {
            Some((f, inp)) => {
                let bv = bounds::evaluate(f, &inp, Mode::Soft)?;
                self.raw(metric, est.n, est.value, est.confidence_radius, f.id(), bv.value, bv.hypotheses_hold());
            }
            None => self.raw(metric, est.n, est.value, est.confidence_radius, "", f64::NAN, false),
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn raw(&mut self, metric: &str, n: usize, emp: f64, radius: f64, formula: &str, bound: f64, holds: bool) {
        let ratio = if bound.is_finite() && holds { emp / bound } else { f64::NAN };
        self.rows.push(BoundReport {
            scenario: self.ctx.cfg.scenario,
            cell: self.cell.index,
            cell_params: self.params.clone(),
            metric: metric.into(),
            n_samples: n,
            empirical: emp,
            conf_radius: radius,
            bound_formula: formula.into(),
            bound_value: bound,
            ratio,
            wall_ms: 0,
            hypotheses_hold: holds,
        });
    }
}

fn cell_params(cfg: &ExperimentConfig, cell: &Cell) -> String {
    let mut m: BTreeMap<&str, Value> = BTreeMap::new();
    m.insert("a", Value::from(cell.a));
    m.insert(cell.axis, Value::from(cell.x));
    match cfg.scenario {
        Scenario::Geometric | Scenario::Randstd => {
            m.insert("base", Value::from(cfg.base.clone()));
        }
        Scenario::NestedGeometric => {
            m.insert("y_base", Value::from(cfg.base.clone()));
            m.insert("t_base", Value::from(cfg.t_base.clone()));
        }
        Scenario::Perturbation => {
            m.insert("b", Value::from(cfg.b));
            m.insert("noise", serde_json::to_value(cfg.noise).expect("enum serialises"));
        }
        Scenario::Fixedpoint | Scenario::Steincheck => {}
    }
    serde_json::to_string(&m).expect("map serialises")
}

/// Runs every cell on a pool of `threads` workers; row order follows cell order.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome> {
    cfg.validate()?;
    let base = Base::parse(&cfg.base)?;
    let t_base = if cfg.scenario == Scenario::NestedGeometric { Some(Base::parse(&cfg.t_base)?) } else { None };
    let ctx = Ctx { cfg, base, t_base };
    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_cell: Vec<Result<Vec<BoundReport>>> = pool.install(|| cells.par_iter().map(|c| run_cell(&ctx, c)).collect());
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    let violations = rows.iter().filter(|r| r.violates()).count();
    Ok(Outcome { rows, violations })
}

fn run_cell(ctx: &Ctx, cell: &Cell) -> Result<Vec<BoundReport>> {
    let start = Instant::now();
    let mut sink = RowSink { ctx, cell, params: cell_params(ctx.cfg, cell), rows: Vec::new() };
    let res = match ctx.cfg.scenario {
        Scenario::Geometric => geometric_cell(ctx, cell, &mut sink),
        Scenario::NestedGeometric => nested_cell(ctx, cell, &mut sink),
        Scenario::Perturbation => perturbation_cell(ctx, cell, &mut sink),
        Scenario::Randstd => randstd_cell(ctx, cell, &mut sink),
        Scenario::Fixedpoint => fixedpoint_cell(cell, &mut sink),
        Scenario::Steincheck => steincheck_cell(ctx, cell, &mut sink),
    };
    res.map_err(|e| Error::Config(format!("cell {}: {e}", sink.params)))?;
    let ms = if ctx.cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
    for r in &mut sink.rows {
        r.wall_ms = ms;
    }
    Ok(sink.rows)
}

fn require_mean_zero(base: &Base) -> Result<f64> {
    let s2 = base.variance();
    if base.mean().abs() > 1e-12 * s2.sqrt() {
        return Err(Error::Domain(format!("base {} must have mean zero", base.label())));
    }
    Ok(s2)
}

fn inputs() -> BoundInput {
    BoundInput::default()
}

/// Summary of |W - W^A| over coupled pairs.
struct CouplingMoments {
    abs_sorted: Vec<f64>,
    e_abs: f64,
    e_sq: f64,
}

impl CouplingMoments {
    fn new(mut d: Vec<f64>) -> Self {
        let n = d.len() as f64;
        let e_abs = d.iter().sum::<f64>() / n;
        let e_sq = d.iter().map(|x| x * x).sum::<f64>() / n;
        sort_samples(&mut d);
        CouplingMoments { abs_sorted: d, e_abs, e_sq }
    }

    fn tail(&self, beta: f64) -> f64 {
        let k = self.abs_sorted.partition_point(|x| *x <= beta);
        (self.abs_sorted.len() - k) as f64 / self.abs_sorted.len() as f64
    }

    /// The smallest smoothing-parameter bound over a grid of beta from the |W - W^A| quantiles.
    fn best_beta_bound(&self, a: f64, s2: f64) -> Result<(Formula, BoundInput)> {
        let m = self.abs_sorted.len();
        let mut cands: Vec<f64> = (1..64).map(|k| self.abs_sorted[(k * m / 64).min(m - 1)]).collect();
        cands.push(self.e_abs);
        let mut best: Option<(f64, BoundInput)> = None;
        for beta in cands.into_iter().filter(|b| *b > 0.0) {
            let inp = BoundInput { a: Some(a), sigma2: Some(s2), beta: Some(beta), tail_prob: Some(self.tail(beta)), ..inputs() };
            let v = bounds::evaluate(Formula::KBeta, &inp, Mode::Soft)?.value;
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, inp));
            }
        }
        let inp = best.map(|b| b.1).unwrap_or(BoundInput { a: Some(a), sigma2: Some(s2), beta: Some(f64::MIN_POSITIVE), tail_prob: Some(0.0), ..inputs() });
        Ok((Formula::KBeta, inp))
    }
}

/// Rows built from coupling moments, against Z = AL(0, a_w, sqrt(s2_w - a_w^2)).
fn coupling_rows(ctx: &Ctx, sink: &mut RowSink, w: &[f64], cm: &CouplingMoments, a_w: f64, s2_w: f64, seed: u64) -> Result<()> {
    let z = AlParams::from_mean_variance(a_w, s2_w)?;
    let mut boot = substream(seed, 3);
    let base_in = BoundInput { a: Some(a_w), sigma2: Some(s2_w), ..inputs() };
    for &m in &ctx.cfg.metrics {
        let est = metrics::estimate(m, w, &z, ctx.cfg.bootstrap, &mut boot)?;
        match m {
            MetricKind::Ks => {
                sink.push("ks", &est, Some(cm.best_beta_bound(a_w, s2_w)?))?;
                let inp = BoundInput { k: Some(2.0), e_k_diff: Some(cm.e_sq), ..base_in.clone() };
                sink.push("ks", &est, Some((Formula::KMoment, inp)))?;
            }
            MetricKind::W1 => {
                sink.push("w1", &est, Some((Formula::W, BoundInput { e_abs_diff: Some(cm.e_abs), ..base_in.clone() })))?;
            }
            MetricKind::D2lb | MetricKind::D12lb => {
                // E|E[W - W^A | W]| <= E|W - W^A|, so this input keeps the bound valid.
                let inp = BoundInput { e_abs_cond: Some(cm.e_abs), e_sq_diff: Some(cm.e_sq), ..base_in.clone() };
                sink.push(m.name(), &est, Some((Formula::D2, inp)))?;
            }
        }
    }
    Ok(())
}

fn geometric_cell(ctx: &Ctx, cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let cfg = ctx.cfg;
    let (a, p) = (cell.a, cell.x);
    let x = &ctx.base;
    let s2 = require_mean_zero(x)?;
    let seed = cell.seed(cfg.seed);
    let mut rng = substream(seed, 0);
    let mut w: Vec<f64> = (0..cfg.samples_per_cell).map(|_| simulate_geometric(p, a, x, &mut rng)).collect();
    sort_samples(&mut w);
    let z = AlParams::new(0.0, a, s2.sqrt())?;
    let coupler = GeometricCoupler::new(p, a, x).ok();
    let sup = coupler.as_ref().map(|c| c.sup_inverse_distance()).unwrap_or(f64::INFINITY);
    let geo_in = BoundInput { p: Some(p), a: Some(a), sigma2: Some(s2), ..inputs() };
    let mut boot = substream(seed, 1);
    for &m in &cfg.metrics {
        let est = metrics::estimate(m, &w, &z, cfg.bootstrap, &mut boot)?;
        match m {
            MetricKind::Ks => {
                if sup.is_finite() {
                    sink.push("ks", &est, Some((Formula::GeoKInverse, BoundInput { sup_inv_dist: Some(sup), ..geo_in.clone() })))?;
                } else {
                    // No quantile coupling for this cell, so the bound cannot be formed.
                    sink.raw("ks", est.n, est.value, est.confidence_radius, Formula::GeoKInverse.id(), f64::INFINITY, false);
                }
                let inp = BoundInput { k: Some(2.0), rho_k2: Some(x.abs_moment(4)), ..geo_in.clone() };
                sink.push("ks", &est, Some((Formula::GeoKMoment, inp)))?;
            }
            MetricKind::W1 => {
                sink.push("w1", &est, Some((Formula::GeoW, BoundInput { rho3: Some(x.abs_moment(3)), ..geo_in.clone() })))?;
            }
            MetricKind::D2lb | MetricKind::D12lb => {
                let inp = BoundInput { abs3: Some(x.abs_moment(3)), x3: Some(x.raw_moment(3)), x4: Some(x.raw_moment(4)), ..geo_in.clone() };
                sink.push(m.name(), &est, Some((Formula::GeoD2, inp)))?;
            }
        }
    }
    if let (Some(c), true) = (coupler, cfg.coupling_samples > 0) {
        let mut crng = substream(seed, 2);
        let d: Vec<f64> = (0..cfg.coupling_samples)
            .map(|_| {
                let pr = c.sample(&mut crng);
                (pr.w - pr.w_a).abs()
            })
            .collect();
        let cm = CouplingMoments::new(d);
        coupling_rows(ctx, sink, &w, &cm, a, s2 + (1.0 - p) * a * a, seed)?;
    }
    Ok(())
}

fn nested_cell(ctx: &Ctx, cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let cfg = ctx.cfg;
    let q = cell.x;
    let y = &ctx.base;
    let t = ctx.t_base.as_ref().expect("parsed for the nested scenario");
    let coupler = NestedCoupler::new(q, t, y)?;
    let seed = cell.seed(cfg.seed);
    let mut rng = substream(seed, 0);
    let mut w: Vec<f64> = (0..cfg.samples_per_cell).map(|_| coupler.simulate(&mut rng)).collect();
    sort_samples(&mut w);
    let (ey, vy, et, vt) = (y.mean(), y.variance(), t.mean(), t.variance());
    let a_w = et * ey / q;
    let s2_w = ey * ey * ((1.0 - q) * et * et / (q * q) + vt / q) + et * vy / q;
    let pairs = if cfg.coupling_samples > 0 { cfg.coupling_samples } else { cfg.samples_per_cell };
    let mut crng = substream(seed, 2);
    let d: Vec<f64> = (0..pairs)
        .map(|_| {
            let pr = coupler.sample(&mut crng);
            (pr.w - pr.w_a).abs()
        })
        .collect();
    coupling_rows(ctx, sink, &w, &CouplingMoments::new(d), a_w, s2_w, seed)
}

fn perturbation_cell(ctx: &Ctx, cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let cfg = ctx.cfg;
    let (a, tau, b) = (cell.a, cell.x, cfg.b);
    let al = AlParams::new(0.0, a, b)?;
    let eta = if tau > 0.0 { cfg.noise.base(tau)? } else { Base::point(0.0) };
    let seed = cell.seed(cfg.seed);
    let mut rng = substream(seed, 0);
    let mut w: Vec<f64> = (0..cfg.samples_per_cell).map(|_| simulate_perturbed(&al, &eta, &mut rng)).collect();
    sort_samples(&mut w);
    let z = AlParams::new(0.0, a, (b * b + tau * tau).sqrt())?;
    let normal = cfg.noise == Noise::Normal;
    let kurt = if tau > 0.0 { eta.raw_moment(4) / tau.powi(4) } else { 1.0 };
    let pin = BoundInput { a: Some(a), b: Some(b), tau: Some(tau), ..inputs() };
    let mut boot = substream(seed, 1);
    for &m in &cfg.metrics {
        let est = metrics::estimate(m, &w, &z, cfg.bootstrap, &mut boot)?;
        match m {
            MetricKind::Ks => {
                sink.push("ks", &est, Some((Formula::PerturbKChebyshev, pin.clone())))?;
                // Markov on the fourth moment: P(|eta| > s) <= E[eta^4] / s^4.
                let inp = BoundInput { n: Some(4.0), c_tail: Some(kurt), ..pin.clone() };
                sink.push("ks", &est, Some((Formula::PerturbKTail, inp)))?;
                if normal {
                    sink.push("ks", &est, Some((Formula::PerturbKNormal, pin.clone())))?;
                }
            }
            MetricKind::W1 => {
                sink.push("w1", &est, Some((Formula::PerturbW, pin.clone())))?;
                if normal {
                    sink.push("w1", &est, Some((Formula::PerturbWNormal, pin.clone())))?;
                }
            }
            MetricKind::D12lb => {
                let f = if normal { Formula::PerturbWNormal } else { Formula::PerturbW };
                sink.push("d12lb", &est, Some((f, pin.clone())))?;
            }
            MetricKind::D2lb => sink.push("d2lb", &est, None)?,
        }
    }
    Ok(())
}

/// Direct draw of sqrt(B) sum_{i<=n} X_i + a n B with B ~ Beta(1, n-1).
pub fn simulate_randstd<R: rand::Rng + ?Sized>(n: u64, a: f64, x_base: &Base, beta: &Base, rng: &mut R) -> f64 {
    let b = beta.sample(rng);
    b.sqrt() * x_base.sample_sum(n, rng) + a * n as f64 * b
}

fn randstd_cell(ctx: &Ctx, cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let cfg = ctx.cfg;
    let (a, nf) = (cell.a, cell.x);
    let n = nf as u64;
    if n < 2 {
        return Err(Error::Config(format!("randstd needs n >= 2 (got {n})")));
    }
    let x = &ctx.base;
    let s2 = require_mean_zero(x)?;
    let beta = Base::beta_one((n - 1) as f64)?;
    let seed = cell.seed(cfg.seed);
    let mut rng = substream(seed, 0);
    let mut w: Vec<f64> = (0..cfg.samples_per_cell).map(|_| simulate_randstd(n, a, x, &beta, &mut rng)).collect();
    sort_samples(&mut w);
    let z = AlParams::new(0.0, a, s2.sqrt())?;
    let rin = BoundInput { n: Some(nf), a: Some(a), sigma2: Some(s2), sum_abs3: Some(nf * x.abs_moment(3)), ..inputs() };
    let mut boot = substream(seed, 1);
    for &m in &cfg.metrics {
        let est = metrics::estimate(m, &w, &z, cfg.bootstrap, &mut boot)?;
        match m {
            MetricKind::Ks => sink.push("ks", &est, Some((Formula::RandstdK, rin.clone())))?,
            MetricKind::W1 => sink.push("w1", &est, Some((Formula::RandstdW, rin.clone())))?,
            MetricKind::D12lb => {
                let inp = BoundInput { sum_fourth: Some(nf * (3.0 + x.raw_moment(4) / (s2 * s2))), x3: Some(x.raw_moment(3)), ..rin.clone() };
                sink.push("d12lb", &est, Some((Formula::RandstdD12, inp)))?;
            }
            MetricKind::D2lb => sink.push("d2lb", &est, None)?,
        }
    }
    Ok(())
}

pub const FIXEDPOINT_DENSITY_TOL: f64 = 1e-8;
pub const FIXEDPOINT_CF_TOL: f64 = 1e-12;

/// Sup-grid differences between the equilibrium transform of AL(0, a, sqrt(s2 - a^2)) and the law itself.
pub fn fixedpoint_gaps(a: f64, s2: f64) -> Result<(f64, f64)> {
    let p = AlParams::from_mean_variance(a, s2)?;
    let base = Base::al(p);
    let (lo, hi) = (p.quantile_unchecked(1e-4), p.quantile_unchecked(1.0 - 1e-4));
    let mut dens = 0.0f64;
    for i in 0..=200 {
        let w = lo + (hi - lo) * i as f64 / 200.0;
        dens = dens.max((equilibrium_density(&base, w)? - p.pdf(w)).abs());
    }
    let mut cf = 0.0f64;
    for i in 0..=40 {
        let t = -5.0 + 10.0 * i as f64 / 40.0;
        cf = cf.max((equilibrium_cf(&base, t)? - p.cf(t)).norm());
    }
    Ok((dens, cf))
}

fn fixedpoint_cell(cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let (d, c) = fixedpoint_gaps(cell.a, cell.x)?;
    sink.raw("density_sup", 201, d, 0.0, "tolerance", FIXEDPOINT_DENSITY_TOL, true);
    sink.raw("cf_sup", 41, c, 0.0, "tolerance", FIXEDPOINT_CF_TOL, true);
    Ok(())
}

fn steincheck_cell(ctx: &Ctx, cell: &Cell, sink: &mut RowSink) -> Result<()> {
    let cfg = ctx.cfg;
    let p = AlParams::new(0.0, cell.a, cfg.b)?;
    let mut rng = substream(cell.seed(cfg.seed), 0);
    let xs: Vec<f64> = (0..cfg.samples_per_cell).map(|_| p.sample(&mut rng)).collect();
    let fam = stein::operator_family();
    let refs: Vec<&dyn SteinFn> = fam.iter().map(|f| f as &dyn SteinFn).collect();
    let (disc, se) = stein::stein_discrepancy(&xs, &p, &refs)?;
    sink.raw("stein_discrepancy", xs.len(), disc, 0.0, "4se", 4.0 * se, true);
    Ok(())
}

// ---------------------------------------------------------------------------------------
// Self-check suite

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub checks: Vec<SelfCheck>,
}

impl SelfCheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const SELFCHECK_SEED: u64 = 20_240_601;
const SELFCHECK_MC: usize = 200_000;

fn push_check(out: &mut Vec<SelfCheck>, name: &str, res: Result<(bool, String)>) {
    let (pass, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
    out.push(SelfCheck { name: name.into(), pass, detail });
}

fn selfcheck_params() -> Vec<AlParams> {
    vec![AlParams::new(0.0, 0.5, 1.0).unwrap(), AlParams::new(0.0, 0.0, 1.0).unwrap(), AlParams::new(0.0, -1.0, 0.7).unwrap()]
}

/// Mass of the tabulated equilibrium law and the minimum density over its knots.
pub fn equilibrium_mass(base: &Base) -> Result<(f64, f64)> {
    let v = EquilibriumView::new(base)?;
    let mut min = f64::INFINITY;
    for &k in v.knots().iter().step_by(7) {
        min = min.min(v.density(k)?);
    }
    Ok((v.total_mass(), min))
}

/// Integration range covering the signed equilibrium measure of a base.
fn signed_range(base: &Base) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = base.support();
    let reach = 40.0 * base.variance().sqrt() + base.mean().abs();
    let l = if lo.is_finite() { lo.min(0.0) } else { -reach };
    let h = if hi.is_finite() { hi.max(0.0) } else { reach };
    let mut breaks = base.breakpoints_in(l, h);
    breaks.push(0.0);
    (l, h, breaks)
}

/// Integral of w^r against the signed density formula, by adaptive quadrature.
pub fn signed_moment_by_quadrature(base: &Base, r: i32) -> Result<f64> {
    let (l, h, breaks) = signed_range(base);
    quad::integrate_pieces(|w| w.powi(r) * equilibrium_signed_density(base, w).unwrap_or(f64::NAN), l, h, &breaks, 1e-12)
}

fn transform_defined(b: &Base) -> bool {
    b.variance() > b.mean() * b.mean() * (1.0 + 1e-12)
}

/// Runs the Stein and equilibrium invariant suites with a pinned seed.
pub fn run_selfcheck(seed: u64) -> SelfCheckReport {
    let mut out = Vec::new();

    push_check(&mut out, "stein: f_h(0) = 0", (|| {
        let mut worst = 0.0f64;
        for p in selfcheck_params() {
            let mut fam = stein::indicator_family(&p, 5);
            fam.extend(stein::lipschitz_family());
            fam.push(TestFn::Gauss);
            for h in fam {
                worst = worst.max(SteinSolution::new(p, h)?.f(0.0)?.abs());
            }
        }
        Ok((worst < 1e-10, format!("max |f(0)| = {worst:e}")))
    })());

    push_check(&mut out, "stein: plug-back residual", (|| {
        let mut worst = 0.0f64;
        for p in selfcheck_params() {
            let sol = SteinSolution::new(p, TestFn::Gauss)?;
            let r = 10.0 / (p.alpha() - p.beta().abs());
            for i in 0..41 {
                let x = -r + 2.0 * r * i as f64 / 40.0;
                let (f, d1, d2) = sol.derivatives(x)?;
                worst = worst.max(sol.residual(x, f, d1, d2).abs());
            }
        }
        Ok((worst < 1e-6, format!("max residual = {worst:e}")))
    })());

    push_check(&mut out, "stein: regularity constants", (|| {
        let mut ok = true;
        let mut worst = f64::NEG_INFINITY;
        for p in selfcheck_params() {
            let mut fam = stein::indicator_family(&p, 25);
            fam.extend(stein::lipschitz_family());
            let rep = stein::verify_regularity(&p, &fam, 1e-6)?;
            ok &= rep.all_ok();
            for r in &rep.rows {
                for (s, l) in r.sups.iter().zip(&r.limits) {
                    worst = worst.max(s - l);
                }
            }
        }
        Ok((ok, format!("max sup - limit = {worst:e}")))
    })());

    push_check(&mut out, "stein: E h(Z) by quadrature vs Monte Carlo", (|| {
        let p = AlParams::new(0.0, 0.5, 1.0)?;
        let mut rng = substream(seed, 10);
        let xs: Vec<f64> = (0..SELFCHECK_MC).map(|_| p.sample(&mut rng)).collect();
        let hs = [TestFn::Gauss, TestFn::Sin { omega: 1.0 }, TestFn::Indicator { z: 0.3 }, TestFn::AbsShift { z: 0.0 }, TestFn::Linear];
        let mut worst = 0.0f64;
        for h in hs {
            let sol = SteinSolution::new(p, h)?;
            let (m, se) = mean_se(xs.iter().map(|&x| h.h(x)));
            worst = worst.max((m - sol.mean_h).abs() / se);
        }
        Ok((worst < 4.0, format!("max |diff| / SE = {worst:.3}")))
    })());

    push_check(&mut out, "stein: characterisation by Monte Carlo", (|| {
        let p = AlParams::new(0.0, 0.5, 1.0)?;
        let mut rng = substream(seed, 11);
        let fam = stein::operator_family();
        let refs: Vec<&dyn SteinFn> = fam.iter().map(|f| f as &dyn SteinFn).collect();
        let xs: Vec<f64> = (0..SELFCHECK_MC).map(|_| p.sample(&mut rng)).collect();
        let (d, se) = stein::stein_discrepancy(&xs, &p, &refs)?;
        let shifted = AlParams::new(0.0, 1.0, 1.0)?;
        let ys: Vec<f64> = (0..SELFCHECK_MC).map(|_| shifted.sample(&mut rng)).collect();
        let (d_alt, _) = stein::stein_discrepancy(&ys, &p, &refs)?;
        Ok((d < 4.0 * se && d_alt > 40.0 * se, format!("self {d:e} (4 SE = {:e}), shifted {d_alt:e}", 4.0 * se)))
    })());

    push_check(&mut out, "equilibrium: unit mass and nonnegativity", (|| {
        let mut worst = 0.0f64;
        let mut min = f64::INFINITY;
        let mut with_law = Vec::new();
        let mut without = Vec::new();
        for (name, b) in builtin_bases().into_iter().filter(|(_, b)| transform_defined(b)) {
            match equilibrium_mass(&b) {
                Ok((mass, m)) => {
                    worst = worst.max((mass - 1.0).abs());
                    min = min.min(m);
                    with_law.push(name);
                }
                // The formula still defines a signed measure of unit mass.
                Err(Error::NoEquilibriumLaw { .. }) => {
                    worst = worst.max((signed_moment_by_quadrature(&b, 0)? - 1.0).abs());
                    without.push(name);
                }
                Err(e) => return Err(e),
            }
        }
        let detail = format!(
            "laws: {} ; signed only: {} ; max |mass - 1| = {worst:e}, min density = {min:e}",
            with_law.join(","),
            without.join(",")
        );
        Ok((worst < 1e-8 && min >= 0.0 && with_law.len() >= 6, detail))
    })());

    push_check(&mut out, "equilibrium: AL fixed point", (|| {
        let mut wd = 0.0f64;
        let mut wc = 0.0f64;
        for (a, s2) in [(0.0, 1.0), (0.5, 1.25), (1.0, 3.0)] {
            let (d, c) = fixedpoint_gaps(a, s2)?;
            wd = wd.max(d);
            wc = wc.max(c);
        }
        Ok((wd < FIXEDPOINT_DENSITY_TOL && wc < FIXEDPOINT_CF_TOL, format!("density {wd:e}, cf {wc:e}")))
    })());

    push_check(&mut out, "equilibrium: support containment", (|| {
        let mut ok = true;
        let mut rng = substream(seed, 12);
        let mut detail = String::new();
        for (name, b) in builtin_bases().into_iter().filter(|(_, b)| transform_defined(b)) {
            let (lo, hi) = b.support();
            if !(lo.is_finite() && hi.is_finite()) {
                continue;
            }
            let c = lo.abs().max(hi.abs());
            let v = match EquilibriumView::new(&b) {
                Err(Error::NoEquilibriumLaw { .. }) => continue,
                v => v?,
            };
            let worst = (0..20_000).map(|_| v.sample(&mut rng).abs()).fold(0.0, f64::max);
            ok &= worst <= c + 1e-12;
            detail.push_str(&format!("{name}: max |W^A| {worst:.6} <= {c:.6}; "));
        }
        Ok((ok, detail))
    })());

    push_check(&mut out, "equilibrium: moment identities", (|| {
        let mut worst = 0.0f64;
        for (_, b) in builtin_bases().into_iter().filter(|(_, b)| transform_defined(b)) {
            for r in 0..=3 {
                let q = signed_moment_by_quadrature(&b, r)?;
                worst = worst.max((q - equilibrium_moment(&b, r as u32)?).abs());
            }
        }
        Ok((worst < 1e-8, format!("max |quadrature - closed form| = {worst:e}")))
    })());

    push_check(&mut out, "equilibrium: absolute moment bound", (|| {
        let mut ok = true;
        for (_, b) in builtin_bases().into_iter().filter(|(_, b)| transform_defined(b)) {
            for k in 1..=2 {
                ok &= equilibrium_abs_moment(&b, k)? <= abs_moment_bound(&b, k)? * (1.0 + 1e-12);
            }
        }
        Ok((ok, String::from("k = 1, 2 on all built-ins with sigma^2 > a^2")))
    })());

    push_check(&mut out, "equilibrium: scaling", (|| {
        let s = Base::two_point(-0.8, 1.2, 0.5)?;
        let r2 = equilibrium_scale_check(&s, 2.0, 1e-8)?;
        let rm = equilibrium_scale_check(&s, -1.0, 1e-8)?;
        Ok((r2.ok && rm.ok, format!("c=2: {:e}, c=-1: {:e}", r2.max_abs_diff, rm.max_abs_diff)))
    })());

    SelfCheckReport { seed, checks: out }
}

/// Sample mean and its standard error.
pub fn mean_se<I: IntoIterator<Item = f64>>(xs: I) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0usize, 0.0f64, 0.0f64);
    for x in xs {
        n += 1;
        s += x;
        s2 += x * x;
    }
    let nf = n as f64;
    let m = s / nf;
    let var = if n > 1 { ((s2 - nf * m * m) / (nf - 1.0)).max(0.0) } else { 0.0 };
    (m, (var / nf).sqrt())
}

/// Least-squares slope of log(y) on log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario":"geometric","p":[0.1],"samples_per_cell":2000,"seed":7}"#).unwrap();
        assert_eq!(cfg.base, "rademacher");
        assert_eq!(cfg.cells().len(), 1);
        assert!(ExperimentConfig::from_json(r#"{"scenario":"geometric","p":[],"samples_per_cell":2000}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"scenario":"geometric","p":[0.1],"samples_per_cell":10}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"scenario":"geometric","p":[0.1],"samples_per_cell":2000,"bogus":1}"#).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.01, 0.001];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        assert!((loglog_slope(&x, &y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_float_format_is_stable() {
        assert_eq!(fmt_f64(0.25), "2.5e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
