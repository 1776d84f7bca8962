//! Semiparametric estimation of generalized treatment effects under a
//! continuous treatment, using entropy-balancing stabilized weights.

pub mod balance;
pub mod cli;
pub mod doseresponse;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mestimate;
pub mod model;
pub mod pipeline;
pub mod sieve;
pub mod simulate;

pub use error::{Error, Result};
