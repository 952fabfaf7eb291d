pub mod cauchy;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolver;
pub mod grid;
pub mod harness;
pub mod harmonic;
pub mod ode;
pub mod projection;
pub mod quadrature;

pub use error::{Error, Result};
