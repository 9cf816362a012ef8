use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("transform undefined: variance {variance} must exceed squared mean {mean_sq}")]
    TransformUndefined { variance: f64, mean_sq: f64 },
    #[error("no equilibrium law: the density formula is {value:e} at w = {w}")]
    NoEquilibriumLaw { w: f64, value: f64 },
    #[error("hypothesis `{condition}` fails for {formula}")]
    Hypothesis { formula: &'static str, condition: String },
    #[error("capability missing: {0}")]
    Capability(String),
    #[error("numeric failure at x = {x}: {reason}")]
    Numeric { x: f64, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
