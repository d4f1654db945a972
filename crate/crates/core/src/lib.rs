//! D-optimal, EW D-optimal and Bayes D-optimal allocations for 2^k factorial
//! experiments with a binary response.

pub mod bayes;
pub mod criterion;
pub mod error;
pub mod fraction;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod rng;
pub mod robust;

pub use error::{Error, Result};
