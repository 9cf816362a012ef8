//! The asymmetric Laplace law and the auxiliary base laws.

mod al;
mod base;
pub mod normal;

pub use al::AlParams;
pub use base::{builtin_bases, Base};
