//! Stein's method for asymmetric Laplace approximation.
//!
//! The crate covers the AL(mu, a, b) law, the Stein operator and the explicit
//! solution of its Stein equation, the asymmetric equilibrium transform with its
//! couplings, empirical distance estimators, closed-form error bounds and a
//! seeded experiment harness that pits the two against each other.

pub mod bounds;
pub mod distributions;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod quad;
pub mod rng;
pub mod stein;

pub use distributions::{AlParams, Base};
pub use error::{Error, Result};
pub use num_complex::Complex64;
