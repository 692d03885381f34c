//! Domain-adjusted regression.
//!
//! Whiten each training domain with its own covariance, then fit one linear
//! or logistic predictor whose score on every whitened domain mean is
//! uninformative. Also ships the baselines it is compared against, the
//! generative model used to test it, and analytic risk tools.

pub mod envmodel;
pub mod error;
pub mod matops;
pub mod persist;
pub mod seeding;
mod serde_mat;
pub mod solvers;
pub mod theory;

pub use error::{DareError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
