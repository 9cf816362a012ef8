use std::io::{self, BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use alap_core::bounds::{self, BoundInput, Formula, Mode};
use alap_core::equilibrium::{equilibrium_density, equilibrium_moment, EquilibriumView};
use alap_core::experiments::{self, ExperimentConfig};
use alap_core::metrics::{self, sort_samples, MetricKind};
use alap_core::rng::seeded;
use alap_core::stein::{SteinSolution, TestFn};
use alap_core::{AlParams, Base, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alap-stein", version, about = "Asymmetric Laplace approximation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlOp {
    Pdf,
    Cdf,
    Quantile,
    Cf,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum EqOp {
    Density,
    Cdf,
    Quantile,
    Sample,
    Moment,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate or sample AL(mu, a, b).
    Al {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, value_enum)]
        op: AlOp,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        t: Option<f64>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solution f_h of the Stein equation and its first two derivatives at x.
    Stein {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// indicator:z, sin[:omega], gauss, linear, const:c or abs:z
        #[arg(long)]
        h: String,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
    /// Run the Stein and equilibrium invariant suites.
    Selfcheck {
        #[arg(long, default_value_t = experiments::SELFCHECK_SEED)]
        seed: u64,
    },
    /// Asymmetric equilibrium transform of a built-in base.
    Equilibrium {
        /// e.g. rademacher, uniform:-1,2, two_point:-1,2,0.5, normal:0,1
        #[arg(long, allow_hyphen_values = true)]
        base: String,
        #[arg(long, value_enum)]
        op: EqOp,
        #[arg(long, allow_hyphen_values = true)]
        w: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        r: Option<u32>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distance between a sample and an AL reference law.
    Metric {
        #[arg(long)]
        samples: PathBuf,
        /// al:mu,a,b
        #[arg(long = "ref", allow_hyphen_values = true)]
        reference: String,
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = metrics::BOOTSTRAP_RESAMPLES)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate one of the closed-form bounds.
    Bound {
        #[arg(long)]
        formula: String,
        /// k=v pairs, e.g. a=0.5,sigma2=1,p=0.01,sup_inv_dist=1.2
        #[arg(long, allow_hyphen_values = true)]
        params: String,
    },
    /// Run an experiment grid and write the report CSV.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required for this operation")))
}

fn parse_al(spec: &str) -> Result<AlParams> {
    match Base::parse(spec)? {
        Base::Al(p) => Ok(p),
        other => Err(Error::Config(format!("reference must be al:mu,a,b (got {})", other.label()))),
    }
}

/// One real per line; a first line that does not parse is taken as a header.
fn read_samples(path: &PathBuf) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let s = line.trim().split(',').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        match s.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Config(format!("line {}: `{s}` is not a number", i + 1))),
        }
    }
    Ok(out)
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match cmd {
        Cmd::Al { mu, a, b, op, x, u, t, n, seed } => {
            let p = AlParams::new(mu, a, b)?;
            match op {
                AlOp::Pdf => writeln!(out, "{}", p.pdf(need(x, "x")?))?,
                AlOp::Cdf => writeln!(out, "{}", p.cdf(need(x, "x")?))?,
                AlOp::Quantile => writeln!(out, "{}", p.quantile(need(u, "u")?)?)?,
                AlOp::Cf => {
                    let v = p.cf(need(t, "t")?);
                    writeln!(out, "{},{}", v.re, v.im)?;
                }
                AlOp::Sample => {
                    let mut rng = seeded(seed);
                    for _ in 0..n {
                        writeln!(out, "{}", p.sample(&mut rng))?;
                    }
                }
            }
        }
        Cmd::Stein { a, b, h, x } => {
            let sol = SteinSolution::new(AlParams::new(0.0, a, b)?, TestFn::parse(&h)?)?;
            let (f, d1, d2) = sol.derivatives(x)?;
            let v = serde_json::json!({ "x": x, "f": f, "df": d1, "d2f": d2, "mean_h": sol.mean_h });
            writeln!(out, "{v}")?;
        }
        Cmd::Selfcheck { seed } => {
            let rep = experiments::run_selfcheck(seed);
            for c in &rep.checks {
                writeln!(out, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
            out.flush()?;
            return Ok(if rep.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Equilibrium { base, op, w, u, r, n, seed } => {
            let base = Base::parse(&base)?;
            match op {
                EqOp::Density => writeln!(out, "{}", equilibrium_density(&base, need(w, "w")?)?)?,
                EqOp::Moment => writeln!(out, "{}", equilibrium_moment(&base, need(r, "r")?)?)?,
                EqOp::Cdf => writeln!(out, "{}", EquilibriumView::new(&base)?.cdf_exact(need(w, "w")?)?)?,
                EqOp::Quantile => writeln!(out, "{}", EquilibriumView::new(&base)?.quantile(need(u, "u")?)?)?,
                EqOp::Sample => {
                    let view = EquilibriumView::new(&base)?;
                    let mut rng = seeded(seed);
                    for _ in 0..n {
                        writeln!(out, "{}", view.sample(&mut rng))?;
                    }
                }
            }
        }
        Cmd::Metric { samples, reference, kind, bootstrap, seed } => {
            let al = parse_al(&reference)?;
            let kind = MetricKind::parse(&kind)?;
            let mut xs = read_samples(&samples)?;
            sort_samples(&mut xs);
            let est = metrics::estimate(kind, &xs, &al, bootstrap, &mut seeded(seed))?;
            writeln!(out, "{}", serde_json::to_string(&est)?)?;
        }
        Cmd::Bound { formula, params } => {
            let f = Formula::parse(&formula)?;
            let bv = bounds::evaluate(f, &BoundInput::parse(&params)?, Mode::Soft)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&bv)?)?;
            out.flush()?;
            return Ok(if bv.hypotheses_hold() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Experiment { config, out: path, threads } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            cfg.apply_env_seed()?;
            let res = experiments::run_experiment(&cfg, threads)?;
            match path.or_else(|| cfg.output.as_ref().map(PathBuf::from)) {
                Some(p) => experiments::write_csv_path(&res.rows, &p)?,
                None => experiments::write_csv(&res.rows, &mut out)?,
            }
            out.flush()?;
            if !res.ok() {
                eprintln!("{} row(s) exceed their bound beyond the confidence radius", res.violations);
                return Ok(ExitCode::from(1));
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
