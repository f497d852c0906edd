//! Lower and upper bounds on the minimum variance achievable by unbiased
//! estimators of a sparse vector observed in white Gaussian noise, together
//! with the estimators and risk evaluators used to compare against them.

pub mod bb_numeric;
pub mod bounds_closed;
pub mod bounds_testpoint;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
mod par;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod selftest;
pub mod special;

pub use error::{Error, Result};
pub use model::{ProblemConfig, SparseParam};
pub use quadrature::QuadratureSpec;
